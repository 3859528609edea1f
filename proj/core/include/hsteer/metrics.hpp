#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsteer/generation.hpp"
#include "hsteer/synth_task.hpp"

namespace hsteer {

// Shannon entropy in bits of the empirical n-gram distribution.
double ngram_entropy(std::span<const int> tokens, std::size_t n);

struct FluencyScore {
  double bigram_entropy = 0.0;
  double trigram_entropy = 0.0;
  double weighted = 0.0;
};

inline constexpr double kDefaultW2 = 2.0 / 3.0;
inline constexpr double kDefaultW3 = 1.0 / 3.0;

// w2 * H2 + w3 * H3. Weights must be non-negative and sum to 1.
FluencyScore fluency(std::span<const int> tokens, double w2 = kDefaultW2, double w3 = kDefaultW3);

// One row of a comparison table or sweep.
struct ExperimentReport {
  std::string method;
  std::string param;   // swept parameter name, empty for single runs
  double value = 0.0;  // swept parameter value
  std::size_t n_eval = 0;
  double accuracy = 0.0;
  double stepwise_rate = 0.0;
  double fluency = 0.0;
  double bigram_entropy = 0.0;
  double trigram_entropy = 0.0;
  double fluency_w2 = kDefaultW2;
  double fluency_w3 = kDefaultW3;
  double perplexity = 0.0;
  std::optional<double> judge;  // external judge score; never computed here
  std::string error;            // non-empty when the run failed
  std::string trace_path;

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

// Fixed column order; doubles are written with 17 significant digits so a
// parsed report compares equal to the emitted one.
inline constexpr std::string_view kReportCsvHeader =
    "method,param,value,n_eval,accuracy,stepwise_rate,fluency,bigram_entropy,trigram_entropy,fluency_w2,fluency_w3,"
    "perplexity,judge,error,trace_path";

void write_reports_csv(std::ostream& out, const std::vector<ExperimentReport>& reports);
std::vector<ExperimentReport> read_reports_csv(std::istream& in);

struct EvalConfig {
  std::size_t max_new = 24;
  std::uint64_t seed = 0;
  double w2 = kDefaultW2;
  double w3 = kDefaultW3;
};

struct EvalOutcome {
  ExperimentReport report;
  std::vector<GenerateResult> generations;
};

// Generates a response for every problem under `plan`. Accuracy uses the
// final numeric token; fluency is taken over all responses concatenated;
// perplexity is exp(mean NLL) of the response tokens (with "<eos>" when
// emitted) given the prompt, pooled over the set.
EvalOutcome evaluate_plan(const ToyModel& m, const std::vector<Problem>& problems, const InterventionPlan& plan,
                          const EvalConfig& cfg, std::string method);

// Runs `point` for every grid value. A failing point yields a report with
// `error` set and the sweep continues.
std::vector<ExperimentReport> run_sweep(const std::vector<double>& grid, const std::string& param,
                                        const std::function<ExperimentReport(double)>& point);

}  // namespace hsteer
