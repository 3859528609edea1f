#pragma once

#include <map>
#include <string_view>
#include <vector>

#include "hsteer/generation.hpp"
#include "hsteer/steering.hpp"
#include "hsteer/synth_task.hpp"

namespace hsteer {

enum class Method { kNone, kOptimize, kDiM, kPca, kLr, kSvm, kDa };

inline constexpr Method kAllMethods[] = {Method::kNone, Method::kOptimize, Method::kDiM, Method::kPca,
                                         Method::kLr,   Method::kSvm,      Method::kDa};

// Report labels: NONE, OPTIMIZE, C-DiM, C-PCA, C-LR, P-SVM, DA.
std::string_view method_label(Method m);
// Accepts the CLI spellings none, optimize, c-dim, c-pca, c-lr, p-svm, da.
Method parse_method(std::string_view text);

// Positive/negative pairs for C-PCA. Records from the same problem are
// paired in order; records without a problem index are paired by rank.
void paired_states(const ContrastiveDataset& data, std::vector<Vector>& pos, std::vector<Vector>& neg);

struct Baselines {
  std::map<SiteKey, ControlVector> dim, pca, lr;
  std::map<SiteKey, Hyperplane> svm;
  std::map<SiteKey, Vector> ablate;  // dim_vector(neg, pos)
};

Baselines fit_baselines(const std::map<SiteKey, ContrastiveDataset>& data, const std::vector<SiteKey>& sites,
                        const LinearFitConfig& cfg = {});

// Control-vector methods use `strength`; the others ignore it.
InterventionPlan make_plan(Method m, const std::vector<SiteKey>& sites, const ProbeBank& bank, const Baselines& b,
                           const OptimizerConfig& optimizer, double strength = 1.0);

inline LmTrainConfig testbed_lm_defaults() {
  LmTrainConfig c;
  c.epochs = 150;
  return c;
}

// Everything that determines the synthetic testbed's language model. The
// document mix and seed come from `corpus`; documents.mode_mix and
// documents.seed are overwritten.
struct TestbedConfig {
  CorpusConfig corpus;
  std::size_t n_train = 400;
  ModelConfig model;
  DocumentConfig documents;
  LmTrainConfig lm = testbed_lm_defaults();
};

ToyModel train_testbed_lm(const std::vector<Problem>& train, const TestbedConfig& cfg, LmTrainReport* report = nullptr);

}  // namespace hsteer
