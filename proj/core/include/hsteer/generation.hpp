#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "hsteer/map_optimizer.hpp"
#include "hsteer/probe.hpp"
#include "hsteer/steering.hpp"
#include "hsteer/toy_lm.hpp"

namespace hsteer {

enum class PlanMode { kNone, kOptimize, kControl, kProject, kAblate };

std::string_view plan_mode_name(PlanMode mode);

// What to do to the hidden states at `sites` while generating. Artifacts
// are keyed by site so each layer can carry its own probe, vector or plane.
struct InterventionPlan {
  PlanMode mode = PlanMode::kNone;
  std::vector<SiteKey> sites;
  OptimizerConfig optimizer;
  std::map<SiteKey, Probe> probes;             // kOptimize
  std::map<SiteKey, ControlVector> controls;   // kControl
  std::map<SiteKey, Hyperplane> planes;        // kProject
  std::map<SiteKey, Vector> ablations;         // kAblate
  double prefill_target_fraction = 0.95;

  // Throws ValueError when a site lacks its artifact, sites are empty for
  // an active mode, or the target fraction is outside (0, 1].
  void validate() const;
};

InterventionPlan plan_none();
InterventionPlan plan_optimize(const std::vector<SiteKey>& sites, const ProbeBank& bank, const OptimizerConfig& cfg);
InterventionPlan plan_control(const std::map<SiteKey, ControlVector>& controls);
InterventionPlan plan_project(const std::map<SiteKey, Hyperplane>& planes);
InterventionPlan plan_ablate(const std::map<SiteKey, Vector>& directions);

struct SiteTrace {
  SiteKey key;
  double f_before = 0.0;  // probe score, or hyperplane score for kProject
  double f_after = 0.0;
  int iterations = 0;
  bool intervened = false;
};

// One record per emitted token, describing the position that produced it.
struct TokenTrace {
  std::size_t index = 0;
  int token = 0;
  std::vector<SiteTrace> sites;
};

struct PrefillTrace {
  SiteKey key;
  std::size_t positions = 0;
  std::size_t negatives = 0;
  int rounds = 0;
  double fraction_positive = 1.0;  // of the optimized negatives
};

struct GenerateResult {
  std::vector<int> tokens;  // emitted tokens, "<eos>" excluded
  bool stopped_at_eos = false;
  std::vector<TokenTrace> trace;
  std::vector<PrefillTrace> prefill;
  std::vector<OptimizerTrace> decode_traces;  // one per decode-phase optimization
};

// Greedy decoding under `plan`. The prompt is fed in one block so
// optimize plans batch its negative states per site; afterwards each new
// position is checked at every plan site (ascending layer, then ATTN, MLP,
// INT_LAYER) and optimized only if the probe scores it below 0.5. Edited
// states stay in the key/value cache. Baseline plans edit every position.
GenerateResult generate(const ToyModel& m, std::span<const int> prompt, const InterventionPlan& plan,
                        std::size_t max_new, RngStream& rng);

// JSON-lines, one object per emitted token.
void write_generation_trace(std::ostream& out, const GenerateResult& r);

}  // namespace hsteer
