#include "hsteer/pipeline.hpp"

#include <algorithm>

namespace hsteer {

std::string_view method_label(Method m) {
  switch (m) {
    case Method::kNone: return "NONE";
    case Method::kOptimize: return "OPTIMIZE";
    case Method::kDiM: return "C-DiM";
    case Method::kPca: return "C-PCA";
    case Method::kLr: return "C-LR";
    case Method::kSvm: return "P-SVM";
    case Method::kDa: return "DA";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Method m : kAllMethods) {
    std::string label(method_label(m));
    std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == label) return m;
  }
  throw ValueError("unknown method '" + std::string(text) + "'");
}

void paired_states(const ContrastiveDataset& data, std::vector<Vector>& pos, std::vector<Vector>& neg) {
  pos.clear();
  neg.clear();
  std::map<int, std::pair<std::vector<const Vector*>, std::vector<const Vector*>>> groups;
  std::vector<const Vector*> loose_pos, loose_neg;
  for (const auto& r : data.records) {
    if (r.group < 0) {
      (r.label ? loose_pos : loose_neg).push_back(&r.h);
    } else {
      auto& g = groups[r.group];
      (r.label ? g.first : g.second).push_back(&r.h);
    }
  }
  auto take = [&](const std::vector<const Vector*>& p, const std::vector<const Vector*>& n) {
    for (std::size_t i = 0; i < std::min(p.size(), n.size()); ++i) {
      pos.push_back(*p[i]);
      neg.push_back(*n[i]);
    }
  };
  for (const auto& [id, g] : groups) take(g.first, g.second);
  take(loose_pos, loose_neg);
}

Baselines fit_baselines(const std::map<SiteKey, ContrastiveDataset>& data, const std::vector<SiteKey>& sites,
                        const LinearFitConfig& cfg) {
  Baselines b;
  for (const auto& key : sites) {
    auto it = data.find(key);
    if (it == data.end()) throw ValueError("fit_baselines: no data for " + to_string(key));
    const ContrastiveDataset& d = it->second;
    std::vector<Vector> pos, neg;
    for (const auto& r : d.records) (r.label ? pos : neg).push_back(r.h);
    b.dim[key] = dim_vector(pos, neg);
    b.ablate[key] = dim_vector(neg, pos).direction;
    b.lr[key] = lr_vector(d, cfg);
    b.svm[key] = svm_train(d, cfg);
    paired_states(d, pos, neg);
    b.pca[key] = pca_vector(pos, neg);
  }
  return b;
}

namespace {

std::map<SiteKey, ControlVector> scaled(std::map<SiteKey, ControlVector> controls, double strength) {
  for (auto& [k, cv] : controls) cv.strength = strength;
  return controls;
}

template <typename Map>
Map restrict(const Map& all, const std::vector<SiteKey>& sites, std::string_view what) {
  Map out;
  for (const auto& key : sites) {
    auto it = all.find(key);
    if (it == all.end()) throw ValueError("make_plan: no " + std::string(what) + " for " + to_string(key));
    out.emplace(key, it->second);
  }
  return out;
}

}  // namespace

InterventionPlan make_plan(Method m, const std::vector<SiteKey>& sites, const ProbeBank& bank, const Baselines& b,
                           const OptimizerConfig& optimizer, double strength) {
  switch (m) {
    case Method::kNone: return plan_none();
    case Method::kOptimize: return plan_optimize(sites, bank, optimizer);
    case Method::kDiM: return plan_control(scaled(restrict(b.dim, sites, "C-DiM vector"), strength));
    case Method::kPca: return plan_control(scaled(restrict(b.pca, sites, "C-PCA vector"), strength));
    case Method::kLr: return plan_control(scaled(restrict(b.lr, sites, "C-LR vector"), strength));
    case Method::kSvm: return plan_project(restrict(b.svm, sites, "hyperplane"));
    case Method::kDa: return plan_ablate(restrict(b.ablate, sites, "ablation direction"));
  }
  throw ValueError("make_plan: bad method");
}

ToyModel train_testbed_lm(const std::vector<Problem>& train, const TestbedConfig& cfg, LmTrainReport* report) {
  const Vocab vocab = synth_vocab();
  const auto context = static_cast<std::size_t>(cfg.model.context_len);
  DocumentConfig docs = cfg.documents;
  docs.mode_mix = cfg.corpus.mode_mix;
  docs.seed = cfg.corpus.seed;
  return train_toy_lm([&](int epoch) { return lm_documents(train, vocab, docs, epoch, context); }, vocab,
                      cfg.model, cfg.lm, report);
}

}  // namespace hsteer
