#include <benchmark/benchmark.h>

#include "hsteer/activation_io.hpp"
#include "hsteer/generation.hpp"
#include "hsteer/map_optimizer.hpp"
#include "hsteer/synth_task.hpp"

namespace hsteer {
namespace {

Vector random_vector(std::size_t dim, RngStream& rng) {
  Vector v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

void BM_ProbeGradient(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  RngStream rng(1);
  const Probe p = Probe::random(dim, 64, rng);
  const Vector h = random_vector(dim, rng);
  for (auto _ : state) benchmark::DoNotOptimize(p.input_gradient(h));
}
BENCHMARK(BM_ProbeGradient)->Arg(64)->Arg(512)->Arg(4096);

void BM_OptimizeHiddenState(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  RngStream rng(2);
  const Probe p = Probe::random(dim, 64, rng);
  Vector h0;
  do {
    h0 = random_vector(dim, rng);
  } while (p.forward(h0) >= 0.5);
  OptimizerConfig cfg;
  for (auto _ : state) {
    RngStream noise(3);
    benchmark::DoNotOptimize(optimize_hidden_state(p, h0, cfg, noise));
  }
}
BENCHMARK(BM_OptimizeHiddenState)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

const ToyModel& bench_model() {
  static const ToyModel m(ModelConfig{}, synth_vocab(), 4);
  return m;
}

void BM_ToyForward(benchmark::State& state) {
  const ToyModel& m = bench_model();
  const auto tokens = problem_tokens(m.vocab(), make_problem({3, 4, 5, 6}), true);
  for (auto _ : state) benchmark::DoNotOptimize(forward_with_capture(m, tokens));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tokens.size()));
}
BENCHMARK(BM_ToyForward)->Unit(benchmark::kMicrosecond);

void BM_GreedyGenerate(benchmark::State& state) {
  const ToyModel& m = bench_model();
  const Problem pr = make_problem({3, 4, 5});
  std::vector<int> prompt;
  for (const auto& t : pr.prompt) prompt.push_back(m.vocab().id(t));
  const InterventionPlan plan = plan_none();
  for (auto _ : state) {
    RngStream rng(5);
    benchmark::DoNotOptimize(generate(m, prompt, plan, 24, rng));
  }
}
BENCHMARK(BM_GreedyGenerate)->Unit(benchmark::kMicrosecond);

void BM_ActrecRoundTrip(benchmark::State& state) {
  RngStream rng(6);
  ActivationFile f;
  f.model_tag = "bench";
  f.dim = 64;
  for (int i = 0; i < 1000; ++i) {
    ActivationRecord r;
    r.layer = static_cast<std::uint16_t>(i % 4);
    r.label = static_cast<std::int8_t>(i % 2);
    for (std::uint32_t d = 0; d < f.dim; ++d) r.values.push_back(static_cast<float>(rng.normal()));
    f.records.push_back(std::move(r));
  }
  std::int64_t bytes = 0;
  for (auto _ : state) {
    const auto enc = encode_records(f);
    benchmark::DoNotOptimize(decode_records(enc));
    bytes += static_cast<std::int64_t>(enc.size());
  }
  state.SetBytesProcessed(bytes);
}
BENCHMARK(BM_ActrecRoundTrip)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace hsteer

BENCHMARK_MAIN();
