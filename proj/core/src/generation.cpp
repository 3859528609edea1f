#include "hsteer/generation.hpp"

#include <algorithm>
#include <json.hpp>

namespace hsteer {

namespace {

constexpr double kDecodeTrigger = 0.5;

Vector row_vector(std::span<const double> block, std::size_t row, std::size_t dim) {
  return Vector(std::vector<double>(block.begin() + static_cast<std::ptrdiff_t>(row * dim),
                                    block.begin() + static_cast<std::ptrdiff_t>((row + 1) * dim)));
}

void store_row(std::span<double> block, std::size_t row, const Vector& v) {
  std::copy(v.begin(), v.end(), block.begin() + static_cast<std::ptrdiff_t>(row * v.dim()));
}

template <typename Map>
void require_artifacts(const InterventionPlan& plan, const Map& artifacts, std::string_view what) {
  for (const auto& key : plan.sites) {
    if (!artifacts.count(key)) {
      throw ValueError("InterventionPlan: no " + std::string(what) + " for site " + to_string(key));
    }
  }
}

template <typename Map>
std::vector<SiteKey> keys_of(const Map& m) {
  std::vector<SiteKey> keys;
  for (const auto& [k, v] : m) keys.push_back(k);
  return keys;
}

// Applies the plan inside forward hooks and records what it did.
class Intervener {
 public:
  Intervener(const InterventionPlan& plan, std::size_t dim, RngStream& rng, GenerateResult& out)
      : plan_(plan), dim_(dim), rng_(rng), out_(out) {}

  void begin_block(bool prefill, std::size_t token_index) {
    prefill_ = prefill;
    token_index_ = token_index;
    pending_.clear();
  }
  std::vector<SiteTrace> take_pending() { return std::move(pending_); }

  void operator()(const SiteKey& key, std::size_t, std::size_t rows, std::span<double> block) {
    if (std::find(plan_.sites.begin(), plan_.sites.end(), key) == plan_.sites.end()) return;
    switch (plan_.mode) {
      case PlanMode::kNone:
        return;
      case PlanMode::kOptimize:
        return prefill_ ? optimize_prefill(key, rows, block) : optimize_decode(key, rows, block);
      case PlanMode::kControl: {
        const ControlVector& cv = plan_.controls.at(key);
        for (std::size_t r = 0; r < rows; ++r) store_row(block, r, apply_control(row_vector(block, r, dim_), cv));
        pending_.push_back(SiteTrace{key, 0.0, 0.0, 0, cv.strength != 0.0});
        return;
      }
      case PlanMode::kProject: {
        const Hyperplane& plane = plan_.planes.at(key);
        SiteTrace st{key, 0.0, 0.0, 0, false};
        for (std::size_t r = 0; r < rows; ++r) {
          Vector h = row_vector(block, r, dim_);
          const double before = plane.score(h);
          double after = before;
          const bool edit = before < 0.0;
          if (edit) {
            h = svm_project(h, plane);
            store_row(block, r, h);
            after = plane.score(h);
          }
          if (r + 1 == rows) st = SiteTrace{key, before, after, 0, edit};
        }
        pending_.push_back(st);
        return;
      }
      case PlanMode::kAblate: {
        const Vector& v = plan_.ablations.at(key);
        for (std::size_t r = 0; r < rows; ++r) {
          store_row(block, r, directional_ablation(row_vector(block, r, dim_), v));
        }
        pending_.push_back(SiteTrace{key, 0.0, 0.0, 0, true});
        return;
      }
    }
  }

 private:
  void optimize_prefill(const SiteKey& key, std::size_t rows, std::span<double> block) {
    const Probe& probe = plan_.probes.at(key);
    std::vector<std::size_t> neg_rows;
    std::vector<Vector> negatives;
    std::vector<double> f0(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      Vector h = row_vector(block, r, dim_);
      f0[r] = probe.forward(h);
      if (f0[r] < kDecodeTrigger) {
        neg_rows.push_back(r);
        negatives.push_back(std::move(h));
      }
    }
    PrefillTrace pt{key, rows, negatives.size(), 0, 1.0};
    SiteTrace last{key, f0[rows - 1], f0[rows - 1], 0, false};
    if (!negatives.empty()) {
      BatchOptimizeResult br;
      try {
        br = optimize_batch(probe, negatives, plan_.optimizer, plan_.prefill_target_fraction, rng_);
      } catch (const OptimizationError& e) {
        throw OptimizationError("prefill at " + to_string(key) + ": " + e.what(), e.partial_trace());
      }
      for (std::size_t i = 0; i < neg_rows.size(); ++i) {
        store_row(block, neg_rows[i], br.h_star[i]);
        if (neg_rows[i] == rows - 1) last = SiteTrace{key, br.f_initial[i], br.f_final[i], br.iterations[i], true};
      }
      pt.rounds = br.rounds;
      pt.fraction_positive = br.fraction_positive;
    }
    out_.prefill.push_back(pt);
    pending_.push_back(last);
  }

  void optimize_decode(const SiteKey& key, std::size_t rows, std::span<double> block) {
    const Probe& probe = plan_.probes.at(key);
    for (std::size_t r = 0; r < rows; ++r) {
      const Vector h = row_vector(block, r, dim_);
      OptimizeResult res;
      try {
        res = optimize_hidden_state(probe, h, plan_.optimizer, rng_);
      } catch (const OptimizationError& e) {
        throw OptimizationError("token " + std::to_string(token_index_) + " at " + to_string(key) + ": " + e.what(),
                                e.partial_trace());
      }
      const bool edited = res.f_initial < kDecodeTrigger;
      if (edited) {
        store_row(block, r, res.h_star);
        out_.decode_traces.push_back(std::move(res.trace));
      }
      pending_.push_back(SiteTrace{key, res.f_initial, res.f_final, res.iterations_used, edited});
    }
  }

  const InterventionPlan& plan_;
  std::size_t dim_;
  RngStream& rng_;
  GenerateResult& out_;
  bool prefill_ = true;
  std::size_t token_index_ = 0;
  std::vector<SiteTrace> pending_;
};

int argmax(const std::vector<double>& logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace

std::string_view plan_mode_name(PlanMode mode) {
  switch (mode) {
    case PlanMode::kNone: return "NONE";
    case PlanMode::kOptimize: return "OPTIMIZE";
    case PlanMode::kControl: return "CONTROL";
    case PlanMode::kProject: return "PROJECT";
    case PlanMode::kAblate: return "ABLATE";
  }
  return "?";
}

void InterventionPlan::validate() const {
  if (!(prefill_target_fraction > 0 && prefill_target_fraction <= 1)) {
    throw ValueError("InterventionPlan: prefill_target_fraction must be in (0, 1]");
  }
  if (mode == PlanMode::kNone) return;
  if (sites.empty()) throw ValueError("InterventionPlan: sites must be nonempty unless mode is NONE");
  switch (mode) {
    case PlanMode::kOptimize:
      optimizer.validate();
      require_artifacts(*this, probes, "probe");
      break;
    case PlanMode::kControl: require_artifacts(*this, controls, "control vector"); break;
    case PlanMode::kProject: require_artifacts(*this, planes, "hyperplane"); break;
    case PlanMode::kAblate: require_artifacts(*this, ablations, "ablation direction"); break;
    case PlanMode::kNone: break;
  }
}

InterventionPlan plan_none() { return InterventionPlan{}; }

InterventionPlan plan_optimize(const std::vector<SiteKey>& sites, const ProbeBank& bank, const OptimizerConfig& cfg) {
  InterventionPlan plan;
  plan.mode = PlanMode::kOptimize;
  plan.sites = sites;
  plan.optimizer = cfg;
  for (const auto& key : sites) {
    auto it = bank.find(key);
    if (it == bank.end()) throw ValueError("plan_optimize: no probe for " + to_string(key));
    plan.probes.emplace(key, it->second.probe);
  }
  return plan;
}

InterventionPlan plan_control(const std::map<SiteKey, ControlVector>& controls) {
  InterventionPlan plan;
  plan.mode = PlanMode::kControl;
  plan.sites = keys_of(controls);
  plan.controls = controls;
  return plan;
}

InterventionPlan plan_project(const std::map<SiteKey, Hyperplane>& planes) {
  InterventionPlan plan;
  plan.mode = PlanMode::kProject;
  plan.sites = keys_of(planes);
  plan.planes = planes;
  return plan;
}

InterventionPlan plan_ablate(const std::map<SiteKey, Vector>& directions) {
  InterventionPlan plan;
  plan.mode = PlanMode::kAblate;
  plan.sites = keys_of(directions);
  plan.ablations = directions;
  return plan;
}

GenerateResult generate(const ToyModel& m, std::span<const int> prompt, const InterventionPlan& plan,
                        std::size_t max_new, RngStream& rng) {
  plan.validate();
  if (prompt.empty()) throw ValueError("generate: empty prompt");
  GenerateResult out;
  Intervener intervener(plan, static_cast<std::size_t>(m.config().embed_dim), rng, out);
  BlockHook hook;
  if (plan.mode != PlanMode::kNone) hook = std::ref(intervener);

  DecodeSession session(m);
  const auto context = static_cast<std::size_t>(m.config().context_len);
  intervener.begin_block(true, 0);
  std::vector<double> logits = session.append(prompt, hook);
  for (std::size_t i = 0; i < max_new; ++i) {
    const int next = argmax(logits);
    out.trace.push_back(TokenTrace{i, next, intervener.take_pending()});
    if (next == m.eos_id()) {
      out.stopped_at_eos = true;
      break;
    }
    out.tokens.push_back(next);
    if (i + 1 == max_new || session.length() >= context) break;
    intervener.begin_block(false, i + 1);
    const int one[1] = {next};
    logits = session.append(one, hook);
  }
  return out;
}

void write_generation_trace(std::ostream& out, const GenerateResult& r) {
  for (const auto& t : r.trace) {
    nlohmann::json j;
    j["index"] = t.index;
    j["token"] = t.token;
    j["intervened"] = std::any_of(t.sites.begin(), t.sites.end(), [](const SiteTrace& s) { return s.intervened; });
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& s : t.sites) {
      sites.push_back({{"site", to_string(s.key)},
                       {"f_before", s.f_before},
                       {"f_after", s.f_after},
                       {"iterations", s.iterations},
                       {"intervened", s.intervened}});
    }
    j["sites"] = std::move(sites);
    out << j.dump() << "\n";
  }
}

}  // namespace hsteer
