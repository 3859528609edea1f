#include "hsteer/binary_io.hpp"
#include "hsteer/probe.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace hsteer {
namespace {

using testing::blobs;
using testing::linear_probe;
using testing::random_vector;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TEST(ProbeForward, ZeroParametersGiveHalf) {
  Probe p(5, 3);
  RngStream rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(p.forward(random_vector(5, rng, 10.0)), 0.5);
}

TEST(ProbeForward, HandComputedSingleUnit) {
  Probe p(2, 1);
  p.w1() = {1.0, 0.0};
  p.w2() = {4.0};
  const double h1 = std::log(9.0) / 4.0;
  EXPECT_NEAR(p.forward(Vector{h1, 0.0}), 0.9, 1e-12);
  EXPECT_NEAR(p.forward(Vector{0.5493, 0.0}), 0.9, 1e-4);
}

TEST(ProbeForward, StrictlyInsideUnitInterval) {
  RngStream rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Probe p = Probe::random(6, 4, rng);
    const double f = p.forward(random_vector(6, rng));
    EXPECT_GT(f, 0.0);
    EXPECT_LT(f, 1.0);
  }
}

TEST(ProbeForward, LogForwardStaysFiniteWhenSaturated) {
  Probe p(1, 1);
  p.w1() = {1.0};
  p.w2() = {-1.0};
  const double lf = p.log_forward(Vector{1000.0});
  EXPECT_TRUE(std::isfinite(lf));
  EXPECT_NEAR(lf, -1000.0, 1e-9);
}

TEST(ProbeForward, DimensionMismatchThrows) {
  Probe p(3, 2);
  EXPECT_THROW(p.forward(Vector{1.0, 2.0}), DimensionError);
  EXPECT_THROW(p.input_gradient(Vector{1.0}), DimensionError);
}

TEST(ProbeForward, Deterministic) {
  RngStream rng(3);
  const Probe p = Probe::random(8, 16, rng);
  const Vector h = random_vector(8, rng);
  EXPECT_EQ(p.forward(h), p.forward(h));
}

// Central differences of log f, skipping points near a rectifier kink.
TEST(ProbeGradient, MatchesFiniteDifferences) {
  RngStream rng(4);
  int checked = 0;
  while (checked < 200) {
    const std::size_t dim = 2 + rng.uniform_int(10);
    const Probe p = Probe::random(dim, 1 + rng.uniform_int(16), rng);
    const Vector h = random_vector(dim, rng);
    bool near_kink = false;
    for (std::size_t j = 0; j < p.hidden_width(); ++j) {
      double z = p.b1()[j];
      for (std::size_t i = 0; i < dim; ++i) z += p.w1()[j * dim + i] * h[i];
      if (std::abs(z) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    const Vector g = p.input_gradient(h);
    const double step = 1e-6;
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      Vector hp = h, hm = h;
      hp[i] += step;
      hm[i] -= step;
      const double fd = (p.log_forward(hp) - p.log_forward(hm)) / (2 * step);
      err += (fd - g[i]) * (fd - g[i]);
      norm += fd * fd;
    }
    EXPECT_LT(std::sqrt(err), 1e-4 * std::max(std::sqrt(norm), 1e-3)) << "case " << checked;
    ++checked;
  }
}

TEST(ProbeGradient, LinearProbeClosedForm) {
  const Vector w{0.5, -1.0, 2.0};
  const Probe p = linear_probe(w, 0.3);
  for (const Vector& h : {Vector{1.0, -0.5, 0.25}, Vector{-1.0, 0.5, -0.25}}) {
    const double s = sigmoid(w.dot(h) + 0.3);
    EXPECT_NEAR(p.forward(h), s, 1e-15);
    const Vector g = p.input_gradient(h);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], (1 - s) * w[i], 1e-12);
  }
}

TEST(ProbeGradient, InactiveSideOfKinkIsZero) {
  Probe p(2, 1);
  p.w1() = {1.0, 1.0};
  p.w2() = {1.0};
  const Vector g = p.input_gradient(Vector{-1.0, -1.0});
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  const Vector at_kink = p.input_gradient(Vector{1.0, -1.0});
  EXPECT_EQ(at_kink[0], 0.0);
}

TEST(TrainProbe, SeparableBlobsHeldOut) {
  const ContrastiveDataset train = blobs(200, 0.3, 10);
  const ContrastiveDataset held = blobs(200, 0.3, 11);
  TrainConfig cfg;
  cfg.seed = 5;
  const Probe p = train_probe(train, cfg);
  EXPECT_GE(evaluate_probe(p, held).accuracy, 0.99);
  EXPECT_GE(evaluate_probe(p, train).accuracy, 0.99);
}

TEST(TrainProbe, LabelFlipNegatesDecision) {
  const ContrastiveDataset data = blobs(200, 0.3, 12);
  ContrastiveDataset flipped = data;
  for (auto& r : flipped.records) r.label = 1 - r.label;
  TrainConfig cfg;
  cfg.seed = 6;
  const Probe p = train_probe(data, cfg);
  const Probe q = train_probe(flipped, cfg);
  double dev = 0.0;
  for (const auto& r : data.records) dev += std::abs(q.forward(r.h) - (1.0 - p.forward(r.h)));
  EXPECT_LT(dev / static_cast<double>(data.records.size()), 0.05);
}

TEST(TrainProbe, SameSeedIsBitIdentical) {
  const ContrastiveDataset data = blobs(50, 0.5, 13);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 99;
  EXPECT_EQ(train_probe(data, cfg), train_probe(data, cfg));
}

TEST(TrainProbe, LossDecreasesOnAverage) {
  const ContrastiveDataset data = blobs(100, 0.8, 14);
  TrainConfig cfg;
  cfg.epochs = 40;
  std::vector<double> losses;
  train_probe(data, cfg, &losses);
  ASSERT_EQ(losses.size(), 40u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += losses[i];
    last += losses[30 + i];
  }
  EXPECT_LT(last, first);
}

TEST(TrainProbe, RejectsBadInput) {
  TrainConfig cfg;
  EXPECT_THROW(train_probe(ContrastiveDataset{}, cfg), ValueError);
  ContrastiveDataset one_class = blobs(10, 0.3, 15);
  std::erase_if(one_class.records, [](const LabeledState& r) { return r.label == 0; });
  EXPECT_THROW(train_probe(one_class, cfg), ValueError);
  TrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ValueError);
  bad = TrainConfig{};
  bad.learning_rate = 0;
  EXPECT_THROW(bad.validate(), ValueError);
}

TEST(Metrics, PerfectPredictions) {
  const ProbeMetrics m = compute_metrics({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_EQ(m.roc_auc, 1.0);
}

TEST(Metrics, ConstantHalfIsChance) {
  const ProbeMetrics m = compute_metrics({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
  // 0.5 counts as a positive prediction.
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.roc_auc, 0.5);
}

TEST(Metrics, AucMatchesPairwiseOracle) {
  RngStream rng(16);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    labels.push_back(static_cast<int>(rng.uniform_int(2)));
    // Coarse grid so ties occur.
    scores.push_back(std::round(rng.uniform() * 10) / 10 + 0.05 * labels.back());
  }
  double wins = 0, pairs = 0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        pairs += 1;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
  EXPECT_NEAR(compute_metrics(scores, labels).roc_auc, wins / pairs, 1e-12);
}

TEST(Metrics, F1ByHand) {
  // tp=2, fp=1, fn=1, tn=1.
  const ProbeMetrics m = compute_metrics({0.9, 0.7, 0.6, 0.2, 0.1}, {1, 1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(m.f1, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 5.0);
}

TEST(Metrics, EmptyOrMismatchedThrows) {
  EXPECT_THROW(compute_metrics({}, {}), ValueError);
  EXPECT_THROW(compute_metrics({0.5}, {1, 0}), DimensionError);
  EXPECT_THROW(evaluate_probe(Probe(2, 1), ContrastiveDataset{}), ValueError);
}

ProbeBank bank_with_f1(Site site, const std::vector<double>& f1) {
  ProbeBank bank;
  for (std::size_t l = 0; l < f1.size(); ++l) {
    BankEntry e;
    e.probe = Probe(2, 1);
    e.metrics.f1 = f1[l];
    bank[{static_cast<int>(l), site}] = e;
  }
  return bank;
}

TEST(SelectSites, TopHalfByF1) {
  const ProbeBank bank = bank_with_f1(Site::kIntLayer, {0.6, 0.9, 0.8, 0.7});
  const auto keys = select_sites(bank, 0.5);
  ASSERT_EQ(keys.size(), 2u);
  EXPECT_EQ(keys[0].layer, 1);
  EXPECT_EQ(keys[1].layer, 2);
}

TEST(SelectSites, FullFractionIsDescendingOrder) {
  const auto keys = select_sites(bank_with_f1(Site::kMlp, {0.6, 0.9, 0.8, 0.7}), 1.0);
  std::vector<int> layers;
  for (const auto& k : keys) layers.push_back(k.layer);
  EXPECT_EQ(layers, (std::vector<int>{1, 2, 3, 0}));
}

TEST(SelectSites, TiesGoToLowerLayer) {
  const auto keys = select_sites(bank_with_f1(Site::kAttn, {0.8, 0.9, 0.9, 0.8}), 1.0);
  std::vector<int> layers;
  for (const auto& k : keys) layers.push_back(k.layer);
  EXPECT_EQ(layers, (std::vector<int>{1, 2, 0, 3}));
}

TEST(SelectSites, PicksBestSiteType) {
  ProbeBank bank = bank_with_f1(Site::kAttn, {0.5, 0.5});
  for (auto& [k, e] : bank_with_f1(Site::kMlp, {0.9, 0.7})) bank[k] = e;
  EXPECT_EQ(best_site(bank), Site::kMlp);
  const auto keys = select_sites(bank, 0.5);
  ASSERT_EQ(keys.size(), 1u);
  EXPECT_EQ(keys[0], (SiteKey{0, Site::kMlp}));
}

TEST(SelectSites, Errors) {
  EXPECT_THROW(select_sites(ProbeBank{}, 0.5), ValueError);
  const ProbeBank bank = bank_with_f1(Site::kMlp, {0.5});
  EXPECT_THROW(select_sites(bank, 0.0), ValueError);
  EXPECT_THROW(select_sites(bank, 1.5), ValueError);
  EXPECT_THROW(select_sites(bank, 0.5, Site::kAttn), ValueError);
}

TEST(SiteNames, ParseAndPrint) {
  EXPECT_EQ(parse_site("attn"), Site::kAttn);
  EXPECT_EQ(parse_site("MLP"), Site::kMlp);
  EXPECT_EQ(parse_site("2"), Site::kIntLayer);
  EXPECT_EQ(site_name(Site::kIntLayer), "INT_LAYER");
  EXPECT_THROW(parse_site("resid"), ValueError);
}

TEST(ProbeIo, RoundTripIsExactAfterF32Rounding) {
  RngStream rng(17);
  const Probe p = Probe::random(7, 5, rng);
  const Probe q = decode_probe(encode_probe(p));
  ASSERT_EQ(q.input_dim(), 7u);
  ASSERT_EQ(q.hidden_width(), 5u);
  for (std::size_t i = 0; i < p.w1().size(); ++i) EXPECT_EQ(q.w1()[i], static_cast<double>(static_cast<float>(p.w1()[i])));
  EXPECT_EQ(decode_probe(encode_probe(q)), q);
}

TEST(ProbeIo, CorruptBytesRejected) {
  RngStream rng(18);
  auto bytes = encode_probe(Probe::random(3, 2, rng));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_probe(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_probe(truncated), FormatError);
}

TEST(ProbeIo, BankRoundTrip) {
  testing::TempDir dir("probe_bank");
  RngStream rng(19);
  ProbeBank bank;
  bank[{0, Site::kMlp}] = BankEntry{Probe::random(4, 3, rng), {0.75, 0.5, 0.875}};
  bank[{2, Site::kIntLayer}] = BankEntry{Probe::random(4, 3, rng), {1.0, 1.0, 1.0}};
  for (auto& [k, e] : bank) e.probe = decode_probe(encode_probe(e.probe));
  save_probe_bank(bank, dir.path());
  const ProbeBank back = load_probe_bank(dir.path());
  ASSERT_EQ(back.size(), 2u);
  for (const auto& [k, e] : bank) {
    EXPECT_EQ(back.at(k).probe, e.probe);
    EXPECT_EQ(back.at(k).metrics.f1, e.metrics.f1);
    EXPECT_EQ(back.at(k).metrics.roc_auc, e.metrics.roc_auc);
  }
}

}  // namespace
}  // namespace hsteer
