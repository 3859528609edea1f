#include "hsteer/metrics.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

namespace hsteer {
namespace {

// Direct count-based entropy, independent of the library's n-gram keying.
double entropy_oracle(const std::vector<int>& t, std::size_t n) {
  std::map<std::vector<int>, double> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) counts[std::vector<int>(t.begin() + i, t.begin() + i + n)] += 1.0;
  const double total = static_cast<double>(t.size() - n + 1);
  double h = 0.0;
  for (const auto& [k, c] : counts) h -= c / total * std::log2(c / total);
  return h;
}

TEST(NgramEntropy, Examples) {
  const std::vector<int> abab = {1, 2, 1, 2, 1, 2};
  // Bigrams: ab x3, ba x2.
  EXPECT_NEAR(ngram_entropy(abab, 2), 0.971, 1e-3);
  EXPECT_NEAR(ngram_entropy(abab, 2), -(0.6 * std::log2(0.6) + 0.4 * std::log2(0.4)), 1e-12);
  EXPECT_DOUBLE_EQ(ngram_entropy(std::vector<int>{1, 1, 1, 1}, 2), 0.0);
  EXPECT_DOUBLE_EQ(ngram_entropy(std::vector<int>{7}, 1), 0.0);
}

TEST(NgramEntropy, DistinctNgramsGiveLogCount) {
  std::vector<int> t;
  for (int i = 0; i < 17; ++i) t.push_back(i);
  for (std::size_t n = 1; n <= 4; ++n)
    EXPECT_NEAR(ngram_entropy(t, n), std::log2(static_cast<double>(t.size() - n + 1)), 1e-12);
}

TEST(NgramEntropy, MatchesOracleAndBounds) {
  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(5 + rng.uniform_int(60));
    for (int& x : t) x = static_cast<int>(rng.uniform_int(5));
    for (std::size_t n = 1; n <= 3; ++n) {
      const double h = ngram_entropy(t, n);
      EXPECT_NEAR(h, entropy_oracle(t, n), 1e-12);
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log2(static_cast<double>(t.size() - n + 1)) + 1e-12);
    }
  }
}

TEST(NgramEntropy, Errors) {
  EXPECT_THROW(ngram_entropy(std::vector<int>{1, 2}, 0), ValueError);
  EXPECT_THROW(ngram_entropy(std::vector<int>{1, 2}, 3), ValueError);
}

TEST(Fluency, WeightedCombination) {
  const std::vector<int> t = {1, 2, 1, 2, 1, 2};
  const FluencyScore s = fluency(t);
  EXPECT_NEAR(s.bigram_entropy, entropy_oracle(t, 2), 1e-12);
  EXPECT_NEAR(s.trigram_entropy, entropy_oracle(t, 3), 1e-12);
  EXPECT_NEAR(s.weighted, 2.0 / 3.0 * s.bigram_entropy + 1.0 / 3.0 * s.trigram_entropy, 1e-12);
  EXPECT_NEAR(fluency(t, 1.0, 0.0).weighted, s.bigram_entropy, 1e-12);
  EXPECT_NEAR(fluency(t, 0.0, 1.0).weighted, s.trigram_entropy, 1e-12);
  EXPECT_DOUBLE_EQ(fluency(std::vector<int>{4, 4, 4, 4}).weighted, 0.0);
}

TEST(Fluency, Errors) {
  const std::vector<int> t = {1, 2, 3};
  EXPECT_THROW(fluency(t, 0.5, 0.6), ValueError);
  EXPECT_THROW(fluency(t, -0.5, 1.5), ValueError);
  EXPECT_THROW(fluency(std::vector<int>{1, 2}), ValueError);
}

ExperimentReport sample_report() {
  ExperimentReport r;
  r.method = "OPTIMIZE";
  r.param = "lambda";
  r.value = 0.1;
  r.n_eval = 200;
  r.accuracy = 0.815;
  r.stepwise_rate = 1.0 / 3.0;
  r.fluency = 3.14159265358979;
  r.bigram_entropy = 2.5;
  r.trigram_entropy = 4.0 / 7.0;
  r.perplexity = 1.0000001;
  r.error = "point failed: \"quoted\", with comma";
  r.trace_path = "runs/a b/trace.csv";
  return r;
}

TEST(ReportsCsv, RoundTripIsExact) {
  ExperimentReport judged = sample_report();
  judged.judge = 0.25;
  judged.error.clear();
  const std::vector<ExperimentReport> reports = {sample_report(), judged, ExperimentReport{}};
  std::stringstream ss;
  write_reports_csv(ss, reports);
  EXPECT_EQ(ss.str().substr(0, kReportCsvHeader.size()), kReportCsvHeader);
  EXPECT_EQ(read_reports_csv(ss), reports);
}

TEST(ReportsCsv, Errors) {
  std::stringstream empty;
  EXPECT_THROW(read_reports_csv(empty), ValueError);
  std::stringstream bad_header("method,value\n");
  EXPECT_THROW(read_reports_csv(bad_header), ValueError);
  std::stringstream short_row(std::string(kReportCsvHeader) + "\nNONE,,0\n");
  EXPECT_THROW(read_reports_csv(short_row), ValueError);
  std::stringstream bad_number(std::string(kReportCsvHeader) + "\nNONE,,x,1,0,0,0,0,0,0.5,0.5,1,,,\n");
  EXPECT_THROW(read_reports_csv(bad_number), ValueError);
}

TEST(RunSweep, CapturesFailuresAndContinues) {
  const auto reports = run_sweep({0.0, 1.0, 2.0}, "strength", [](double v) {
    if (v == 1.0) throw NumericError("diverged");
    ExperimentReport r;
    r.method = "CONTROL";
    r.accuracy = v / 4.0;
    return r;
  });
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_TRUE(reports[0].error.empty());
  EXPECT_EQ(reports[1].error, "diverged");
  EXPECT_DOUBLE_EQ(reports[2].accuracy, 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(reports[i].param, "strength");
    EXPECT_DOUBLE_EQ(reports[i].value, static_cast<double>(i));
  }
  EXPECT_THROW(run_sweep({}, "x", [](double) { return ExperimentReport{}; }), ValueError);
}

ToyModel small_synth_model() {
  ModelConfig c;
  c.embed_dim = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.context_len = 48;
  return ToyModel(c, synth_vocab(), 5);
}

TEST(EvaluatePlan, ReportMatchesGenerations) {
  const ToyModel m = small_synth_model();
  CorpusConfig cc;
  cc.n_problems = 6;
  const auto problems = gen_corpus(cc);
  EvalConfig cfg;
  cfg.max_new = 10;
  const EvalOutcome out = evaluate_plan(m, problems, plan_none(), cfg, "NONE");
  ASSERT_EQ(out.generations.size(), problems.size());
  EXPECT_EQ(out.report.method, "NONE");
  EXPECT_EQ(out.report.n_eval, 6u);

  std::vector<std::vector<std::string>> texts;
  std::vector<int> pooled;
  std::size_t stepwise = 0;
  for (const auto& g : out.generations) {
    std::vector<std::string> w;
    for (int t : g.tokens) w.push_back(m.vocab().text(t));
    stepwise += is_stepwise(w);
    texts.push_back(w);
    pooled.insert(pooled.end(), g.tokens.begin(), g.tokens.end());
  }
  EXPECT_DOUBLE_EQ(out.report.accuracy, accuracy(problems, texts));
  EXPECT_DOUBLE_EQ(out.report.stepwise_rate, static_cast<double>(stepwise) / 6.0);
  if (pooled.size() >= 3) {
    EXPECT_NEAR(out.report.fluency, fluency(pooled).weighted, 1e-12);
  }
  EXPECT_GT(out.report.perplexity, 1.0);
  EXPECT_FALSE(out.report.judge.has_value());

  const EvalOutcome again = evaluate_plan(m, problems, plan_none(), cfg, "NONE");
  EXPECT_EQ(again.report, out.report);
  EXPECT_THROW(evaluate_plan(m, {}, plan_none(), cfg, "NONE"), ValueError);
}

}  // namespace
}  // namespace hsteer
