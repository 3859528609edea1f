// Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
// Exit status is 0 once every criterion has been evaluated; --strict makes
// any FAIL a nonzero exit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hsteer/activation_io.hpp"
#include "hsteer/binary_io.hpp"
#include "hsteer/map_optimizer.hpp"
#include "hsteer/metrics.hpp"
#include "hsteer/pipeline.hpp"

namespace hsteer {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vector random_vector(std::size_t dim, RngStream& rng, double scale = 1.0) {
  Vector v(dim);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

Probe linear_probe(const Vector& w, double b = 0.0) {
  Probe p(w.dim(), 2);
  for (std::size_t i = 0; i < w.dim(); ++i) {
    p.w1()[i] = w[i];
    p.w1()[w.dim() + i] = -w[i];
  }
  p.w2() = {1.0, -1.0};
  p.b2() = b;
  return p;
}

// Random two-layer probe and a start state it scores in [0.05, 0.5).
struct Fixture {
  Probe probe;
  Vector h0;
};

Fixture standard_fixture(std::size_t dim, std::uint64_t seed) {
  RngStream rng(seed);
  Fixture fx{Probe::random(dim, 64, rng), {}};
  do {
    fx.h0 = random_vector(dim, rng);
  } while (fx.probe.forward(fx.h0) >= 0.5 || fx.probe.forward(fx.h0) < 0.05);
  return fx;
}

const char* denominator_name(StepDenominator d) {
  return d == StepDenominator::kOnePlus ? "1+f(h0)" : "|f(h0)|+eps";
}

StepDenominator other(StepDenominator d) {
  return d == StepDenominator::kOnePlus ? StepDenominator::kAbsPlusEpsilon : StepDenominator::kOnePlus;
}

// ---------------------------------------------------------------------------

double relative_error(const Vector& analytic, const Vector& numeric) {
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& h, double step) {
  Vector g(h.dim());
  Vector x = h;
  for (std::size_t i = 0; i < h.dim(); ++i) {
    x[i] = h[i] + step;
    const double up = f(x);
    x[i] = h[i] - step;
    const double down = f(x);
    x[i] = h[i];
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  RngStream rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t dim : {4u, 64u, 512u}) {
    for (int c = 0; c < 200; ++c) {
      const Probe p = Probe::random(dim, 64, rng);
      const Vector h = random_vector(dim, rng);
      const Vector h0 = random_vector(dim, rng);
      const double lambda = rng.uniform();
      const Vector fd_probe = central_difference([&](const Vector& x) { return p.log_forward(x); }, h, 1e-5);
      const Vector fd_obj = central_difference([&](const Vector& x) { return objective(p, x, h0, lambda); }, h, 1e-5);
      worst = std::max(worst, relative_error(probe_input_gradient(p, h), fd_probe));
      worst = std::max(worst, relative_error(objective_gradient(p, h, h0, lambda), fd_obj));
      checked += 2;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt("%zu gradients at dims {4,64,512}, worst relative error %.2e (< 1e-4), %.1f s (< 10 s)", checked, worst,
              secs)};
}

// Replays default-config optimizer trajectories on random probes. At every
// visited state where the upper bound is active, lambda is set to 0.9 x bound
// and the update direction grad* - 2 lambda (h_t - h0) is compared with grad*.
Outcome lemma1_verification() {
  const auto t0 = Clock::now();
  const OptimizerConfig cfg;
  std::size_t total = 0, ok = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 1; total < 500; ++seed) {
    const Fixture fx = standard_fixture(16, seed);
    RngStream rng(seed);
    const double f0 = fx.probe.forward(fx.h0);
    Vector h = fx.h0;
    for (int t = 0; t < cfg.max_iters && total < 500; ++t) {
      const double f = fx.probe.forward(h);
      if (f > cfg.tau) break;
      const Vector g = fx.probe.input_gradient(h);
      const Vector u = h - fx.h0;
      const auto bound = g.norm() > 0 ? lemma1_upper_bound(u, g, cfg.epsilon_c) : std::nullopt;
      if (bound && *bound > 0) {
        const double c = cosine_similarity(g, g - (2.0 * 0.9 * *bound) * u);
        ++total;
        if (c >= 1 - cfg.epsilon_c) ++ok;
        worst = std::min(worst, c);
      }
      const double alpha = adaptive_step(cfg.alpha0, cfg.tau, f, f0, cfg.epsilon, cfg.denominator);
      h = h + alpha * objective_gradient(fx.probe, h, fx.h0, cfg.lambda);
      if (cfg.noise_enabled) h = h + std::sqrt(alpha) * gaussian_sample(h.dim(), rng);
    }
  }
  const double secs = seconds_since(t0);
  return {ok == total && secs < 5.0,
          fmt("%zu/%zu active steps with cos >= %.2f (min %.3f), %.1f s (< 5 s)", ok, total, 1 - cfg.epsilon_c, worst,
              secs)};
}

Outcome lemma2_boundaries() {
  RngStream rng(202);
  bool zero_ok = true;
  double worst = 0.0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t dim = 1 + rng.uniform_int(64);
    const Vector h0 = random_vector(dim, rng);
    const Vector ht = h0 + random_vector(dim, rng);
    const Vector g = random_vector(dim, rng);
    const double ct = rng.uniform();
    if (lemma2_lower_bound(ht, h0, g, ct, 0.0) != 0.0) zero_ok = false;
    const double h = std::sqrt(l2_distance(ht, h0));  // l2_distance is squared
    const double b = g.norm() + h * ct;
    const double d = 2.0 * h;
    worst = std::max(worst, std::abs(lemma2_lower_bound(ht, h0, g, ct, b * b) - b / d));
  }
  return {zero_ok && worst <= 1e-9,
          fmt("eps_d=0 gives exactly 0 in 200/200: %s; zero-discriminant max deviation %.1e (<= 1e-9)",
              zero_ok ? "yes" : "no", worst)};
}

int count_converged(StepDenominator den, bool noise) {
  const Probe p = linear_probe(Vector{4.0, 0.0});
  RngStream starts(303);
  int converged = 0;
  for (int i = 0; i < 100; ++i) {
    const Vector h0{-(0.05 + 1.45 * starts.uniform()), starts.normal()};
    OptimizerConfig cfg;
    cfg.lambda = 0.0;
    cfg.noise_enabled = noise;
    cfg.denominator = den;
    cfg.seed = static_cast<std::uint64_t>(i);
    RngStream rng(static_cast<std::uint64_t>(1000 + i));
    if (optimize_hidden_state(p, h0, cfg, rng).converged) ++converged;
  }
  return converged;
}

Outcome optimizer_convergence() {
  const auto t0 = Clock::now();
  const StepDenominator den = OptimizerConfig{}.denominator;
  const int quiet = count_converged(den, false);
  const int noisy = count_converged(den, true);
  const int quiet_alt = count_converged(other(den), false);
  const int noisy_alt = count_converged(other(den), true);
  const double secs = seconds_since(t0);
  return {quiet == 100 && noisy >= 95 && secs < 30.0,
          fmt("step %s: noise off %d/100 (need 100), noise on %d/100 (need 95); "
              "[%s: %d/100, %d/100]; %.1f s",
              denominator_name(den), quiet, noisy, denominator_name(other(den)), quiet_alt, noisy_alt, secs)};
}

struct TrendRun {
  std::vector<double> dist, f;
};

TrendRun lambda_trend(bool noise, StepDenominator den) {
  const Fixture fx = standard_fixture(16, 21);
  TrendRun run;
  for (double lambda : {0.0, 0.01, 0.1, 1.0, 5.0}) {
    OptimizerConfig cfg;
    cfg.lambda = lambda;
    cfg.noise_enabled = noise;
    cfg.denominator = den;
    RngStream rng(77);
    const auto r = optimize_hidden_state(fx.probe, fx.h0, cfg, rng);
    run.dist.push_back(l2_distance(r.h_star, fx.h0));
    run.f.push_back(r.f_final);
  }
  return run;
}

bool trend_holds(const TrendRun& r) {
  for (std::size_t i = 1; i < r.dist.size(); ++i) {
    if (!(r.dist[i] <= r.dist[i - 1])) return false;
  }
  // f non-increasing from lambda = 0.1 (index 2) on.
  for (std::size_t i = 3; i < r.f.size(); ++i) {
    if (!(r.f[i] <= r.f[i - 1])) return false;
  }
  return true;
}

std::string trend_text(const TrendRun& r) {
  std::ostringstream s;
  s << "d=";
  for (double d : r.dist) s << fmt("%.3g ", d);
  s << "f=";
  for (double f : r.f) s << fmt("%.3f ", f);
  return s.str();
}

Outcome lambda_tradeoff() {
  const StepDenominator den = OptimizerConfig{}.denominator;
  const TrendRun noisy = lambda_trend(true, den);
  const TrendRun quiet = lambda_trend(false, den);
  const TrendRun alt = lambda_trend(true, other(den));
  const bool pass = trend_holds(noisy) && trend_holds(quiet);
  return {pass, fmt("lambda {0,0.01,0.1,1,5}, step %s: noise on %s[%s]; noise off %s[%s]; [%s noise on: %s]",
                    denominator_name(den), trend_text(noisy).c_str(), trend_holds(noisy) ? "ok" : "violated",
                    trend_text(quiet).c_str(), trend_holds(quiet) ? "ok" : "violated", denominator_name(other(den)),
                    trend_holds(alt) ? "ok" : "violated")};
}

// ---------------------------------------------------------------------------
// Synthetic testbed shared by the end-to-end criteria.

struct Testbed {
  TestbedConfig cfg;
  CorpusSplit split;
  std::optional<ToyModel> model;
  std::map<SiteKey, ContrastiveDataset> datasets;
  ProbeBank bank;
  std::vector<SiteKey> sites;
  Baselines baselines;
  std::map<std::string, ExperimentReport> reports;
  double setup_seconds = 0.0;
  double train_seconds = 0.0;
};

Testbed build_testbed(const std::filesystem::path& cache) {
  const auto t0 = Clock::now();
  Testbed tb;
  tb.split = split_corpus(gen_corpus(tb.cfg.corpus), tb.cfg.n_train);
  if (!cache.empty() && std::filesystem::exists(cache)) {
    tb.model = load_model(cache);
  } else {
    tb.model = train_testbed_lm(tb.split.train, tb.cfg);
    if (!cache.empty()) save_model(*tb.model, cache);
  }
  tb.train_seconds = seconds_since(t0);
  tb.datasets = build_contrastive_all(*tb.model, tb.split.train, all_sites(tb.model->config()));
  for (const auto& [key, data] : tb.datasets) tb.bank[key] = train_and_evaluate(data, TrainConfig{});
  tb.sites = select_sites(tb.bank, 0.5, Site::kIntLayer);
  tb.baselines = fit_baselines(tb.datasets, tb.sites);
  tb.setup_seconds = seconds_since(t0);
  return tb;
}

ExperimentReport run_method(Testbed& tb, Method m, const OptimizerConfig& oc, double strength, std::string tag) {
  auto it = tb.reports.find(tag);
  if (it != tb.reports.end()) return it->second;
  const auto plan = make_plan(m, tb.sites, tb.bank, tb.baselines, oc, strength);
  ExperimentReport r = evaluate_plan(*tb.model, tb.split.eval, plan, EvalConfig{}, std::string(method_label(m))).report;
  tb.reports[tag] = r;
  return r;
}

ExperimentReport none_report(Testbed& tb) { return run_method(tb, Method::kNone, {}, 1.0, "none"); }
ExperimentReport optimize_report(Testbed& tb, double tau = 0.9) {
  OptimizerConfig oc;
  oc.tau = tau;
  return run_method(tb, Method::kOptimize, oc, 1.0, fmt("optimize tau=%g", tau));
}

Outcome end_to_end(Testbed& tb) {
  const auto t0 = Clock::now();
  const ExperimentReport none = none_report(tb);
  const ExperimentReport opt = optimize_report(tb);
  const double secs = tb.setup_seconds + seconds_since(t0);
  double min_f1 = 1.0;
  for (const auto& key : tb.sites) min_f1 = std::min(min_f1, tb.bank.at(key).metrics.f1);
  std::string layers;
  for (const auto& key : tb.sites) layers += to_string(key) + " ";
  const bool pass = none.stepwise_rate < 0.3 && opt.stepwise_rate > 0.7 && opt.accuracy > none.accuracy &&
                    opt.perplexity < 2 * none.perplexity && secs < 900;
  return {pass, fmt("probes %s(min F1 %.3f); stepwise NONE %.2f (< 0.30) OPTIMIZE %.2f (> 0.70); accuracy NONE %.2f "
                    "OPTIMIZE %.2f (must rise); ppl NONE %.3f OPTIMIZE %.3f (< 2x); %.0f s incl. %.0f s LM training",
                    layers.c_str(), min_f1, none.stepwise_rate, opt.stepwise_rate, none.accuracy, opt.accuracy,
                    none.perplexity, opt.perplexity, secs, tb.train_seconds)};
}

Outcome baseline_ordering(Testbed& tb) {
  const ExperimentReport none = none_report(tb);
  const ExperimentReport opt = optimize_report(tb);
  bool pass = true;
  std::string text = fmt("OPTIMIZE %.2f, NONE %.2f;", opt.accuracy, none.accuracy);
  for (Method m : {Method::kDiM, Method::kPca, Method::kLr, Method::kSvm, Method::kDa}) {
    const ExperimentReport r = run_method(tb, m, {}, 1.0, std::string(method_label(m)) + " s=1");
    const bool below_opt = opt.accuracy >= r.accuracy;
    const bool near_none = r.accuracy >= none.accuracy - 0.02;
    pass = pass && below_opt && near_none;
    text += fmt(" %s %.2f%s%s", std::string(method_label(m)).c_str(), r.accuracy, below_opt ? "" : " (> OPTIMIZE)",
                near_none ? "" : " (< NONE-2pp)");
  }
  return {pass, text};
}

Outcome tau_sweep(Testbed& tb) {
  const double a50 = optimize_report(tb, 0.5).accuracy;
  const double a90 = optimize_report(tb, 0.9).accuracy;
  const double a99 = optimize_report(tb, 0.99).accuracy;
  const bool pass = std::abs(a90 - a99) <= 0.01 + 1e-12 && a90 > a50;
  return {pass, fmt("accuracy tau=0.5 %.2f, tau=0.9 %.2f, tau=0.99 %.2f (need |0.9-0.99| <= 0.01 and 0.9 > 0.5)", a50,
                    a90, a99)};
}

Outcome strength_collapse(Testbed& tb) {
  const ExperimentReport none = none_report(tb);
  const ExperimentReport lr8 = run_method(tb, Method::kLr, {}, 8.0, "C-LR s=8");
  const bool pass = lr8.accuracy < none.accuracy && lr8.fluency < none.fluency;
  return {pass, fmt("C-LR strength 8: accuracy %.2f vs NONE %.2f, fluency %.3f vs NONE %.3f (both must drop)",
                    lr8.accuracy, none.accuracy, lr8.fluency, none.fluency)};
}

// ---------------------------------------------------------------------------

std::string error_kind(std::span<const std::uint8_t> bytes) {
  try {
    decode_records(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  return "none";
}

Outcome format_round_trip() {
  RngStream rng(404);
  ActivationFile f;
  f.model_tag = "acceptance";
  f.dim = 32;
  for (int i = 0; i < 1000; ++i) {
    ActivationRecord r;
    r.layer = static_cast<std::uint16_t>(rng.uniform_int(64));
    r.site = static_cast<Site>(rng.uniform_int(3));
    r.label = static_cast<std::int8_t>(static_cast<int>(rng.uniform_int(3)) - 1);
    r.position = static_cast<std::uint32_t>(rng.uniform_int(1u << 20));
    for (std::uint32_t d = 0; d < f.dim; ++d) r.values.push_back(static_cast<float>(rng.normal()));
    f.records.push_back(std::move(r));
  }
  const auto dir = std::filesystem::temp_directory_path() / "hsteer_acceptance_actrec";
  std::filesystem::create_directories(dir);
  write_records(dir / "a.bin", f);
  const auto bytes = read_file_bytes(dir / "a.bin");
  const bool identical = read_records(dir / "a.bin") == f && encode_records(read_records(dir / "a.bin")) == bytes;
  std::filesystem::remove_all(dir);

  const std::size_t header = 7 + 4 + 4 + 2 + f.model_tag.size() + 4 + 8;
  const std::size_t record = 12 + 4 * f.dim;
  struct Case {
    const char* name;
    std::vector<std::uint8_t> data;
    const char* expected;
  };
  std::vector<Case> cases;
  auto mutate = [&](const char* name, const char* expected, auto edit) {
    auto b = bytes;
    edit(b);
    cases.push_back({name, std::move(b), expected});
  };
  mutate("magic", "bad magic", [](auto& b) { b[0] = 'B'; });
  mutate("version", "version mismatch", [](auto& b) { b[7] = 9; });
  mutate("endian", "bad header", [](auto& b) { std::swap(b[11], b[14]); });
  mutate("short header", "truncated", [](auto& b) { b.resize(20); });
  mutate("cut record", "truncated", [&](auto& b) { b.resize(header + 500 * record + 7); });
  mutate("trailing", "bad header", [](auto& b) { b.push_back(0); });
  mutate("site", "invalid enum", [&](auto& b) { b[header + 2] = 7; });
  mutate("label", "invalid enum", [&](auto& b) { b[header + 3] = 0x7f; });
  mutate("record dim", "dim mismatch", [&](auto& b) { b[header + 8] ^= 1; });
  std::size_t raised = 0;
  std::string misses;
  for (const auto& c : cases) {
    const std::string got = error_kind(c.data);
    if (got.starts_with(c.expected)) {
      ++raised;
    } else {
      misses += std::string(" ") + c.name + "->" + got;
    }
  }
  return {identical && raised == cases.size(),
          fmt("1000 records byte-identical: %s; corrupt fixtures raising their error: %zu/%zu%s",
              identical ? "yes" : "no", raised, cases.size(), misses.c_str())};
}

}  // namespace
}  // namespace hsteer

int main(int argc, char** argv) {
  using namespace hsteer;
  CLI::App app{"hsteer acceptance suite"};
  bool strict = false;
  std::vector<int> only;
  std::string report_path;
  std::string cache;
  app.add_flag("--strict", strict, "Exit nonzero when any criterion fails");
  app.add_option("--only", only, "Run only these criterion numbers (1-10)");
  app.add_option("--report", report_path, "Also write the PASS/FAIL lines to this file");
  app.add_option("--testbed-cache", cache, "Load the testbed LM from this file, or save it there after training");
  CLI11_PARSE(app, argc, argv);

  std::optional<Testbed> testbed;
  auto tb = [&]() -> Testbed& {
    if (!testbed) testbed = build_testbed(cache);
    return *testbed;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"upper lambda bound keeps alignment", lemma1_verification},
      {"lower lambda bound boundary cases", lemma2_boundaries},
      {"optimizer convergence", optimizer_convergence},
      {"lambda trade-off trend", lambda_tradeoff},
      {"end-to-end mode elicitation", [&] { return end_to_end(tb()); }},
      {"baseline ordering", [&] { return baseline_ordering(tb()); }},
      {"tau sweep trend", [&] { return tau_sweep(tb()); }},
      {"strength-collapse contrast", [&] { return strength_collapse(tb()); }},
      {"ACTREC1 format round-trip", format_round_trip},
  };

  std::ofstream report;
  if (!report_path.empty()) report.open(report_path);
  int passed = 0, run = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    ++run;
    passed += o.pass;
    const std::string line =
        fmt("%s [%2d] %s: ", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str()) + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (report) report << line << "\n";
  }
  const std::string summary = fmt("acceptance: %d/%d criteria passed", passed, run);
  std::printf("%s\n", summary.c_str());
  if (report) report << summary << "\n";
  return strict && passed != run ? 1 : 0;
}
