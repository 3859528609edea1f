#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hsteer/numerics.hpp"
#include "hsteer/probe.hpp"

namespace hsteer {

// How the adaptive step normalizes by the probe score of the start state.
//   kAbsPlusEpsilon: alpha0 * |tau - f(h_t)| / (|f(h0)| + epsilon)
//   kOnePlus:        alpha0 * |tau - f(h_t)| / (1 + f(h0))
// kAbsPlusEpsilon grows without bound as f(h0) -> 0, and the update then
// diverges once 2 * lambda * alpha_t > 2. kOnePlus keeps alpha_t <= alpha0 * tau.
enum class StepDenominator { kAbsPlusEpsilon, kOnePlus };

struct OptimizerConfig {
  double alpha0 = 0.1;
  double lambda = 0.01;
  double tau = 0.9;
  int max_iters = 200;
  double epsilon = 1e-8;
  bool noise_enabled = true;
  double epsilon_c = 0.1;
  double epsilon_d = 0.0;
  std::uint64_t seed = 0;
  StepDenominator denominator = StepDenominator::kOnePlus;
  // Abort with BoundsViolation as soon as lambda leaves [lower, upper].
  bool strict_bounds = false;

  void validate() const;
};

struct TraceStep {
  int t = 0;
  double f_value = 0.0;         // f(h_{t+1})
  double distance_to_h0 = 0.0;  // d(h_{t+1}, h0)
  double step_size = 0.0;       // alpha_t
  double grad_likelihood_norm = 0.0;
  double grad_total_norm = 0.0;
  std::optional<double> cosine;        // cos(grad_likelihood, grad_total) at h_t
  std::optional<double> lemma1_upper;  // unset: bound inactive
  std::optional<double> lemma2_lower;  // unset: not computable at this step
  bool bound_violated = false;
};

using OptimizerTrace = std::vector<TraceStep>;

struct OptimizeResult {
  Vector h_star;
  bool converged = false;  // f(h_star) > tau
  int iterations_used = 0;
  double f_initial = 0.0;
  double f_final = 0.0;
  OptimizerTrace trace;
};

// Non-finite state during iteration; carries the steps recorded so far.
class OptimizationError : public NumericError {
 public:
  OptimizationError(const std::string& msg, OptimizerTrace partial)
      : NumericError(msg), partial_(std::move(partial)) {}
  const OptimizerTrace& partial_trace() const { return partial_; }

 private:
  OptimizerTrace partial_;
};

// Strict mode only: lambda fell outside the per-step bounds.
class BoundsViolation : public Error {
 public:
  BoundsViolation(const std::string& msg, OptimizerTrace partial) : Error(msg), partial_(std::move(partial)) {}
  const OptimizerTrace& partial_trace() const { return partial_; }

 private:
  OptimizerTrace partial_;
};

// log f(h) - lambda * d(h, h0)
double objective(const Probe& p, const Vector& h, const Vector& h0, double lambda);

// grad log f(h) - lambda * 2 (h - h0)
Vector objective_gradient(const Probe& p, const Vector& h, const Vector& h0, double lambda);

double adaptive_step(double alpha0, double tau, double f_ht, double f_h0, double epsilon,
                     StepDenominator denominator = StepDenominator::kAbsPlusEpsilon);

// Largest lambda that keeps cos(grad_star, grad_star - 2 lambda h_t) above
// 1 - epsilon_c under the equal-norm approximation:
//   epsilon_c * |grad_star|^2 / (2 * h_t . grad_star).
// `h_t` is the state expressed relative to h0. Returns nullopt when
// h_t . grad_star <= 0, where no positive lambda can hurt alignment.
std::optional<double> lemma1_upper_bound(const Vector& h_t, const Vector& grad_star, double epsilon_c);

// Smallest lambda that keeps the distance reduction above epsilon_d.
// With G = |grad_star|, H = |h_t - h0|, D = |2 (h_t - h0)|, b = G + H c_t:
//   (b - sqrt(b^2 - epsilon_d)) / D, clamped at 0.
// Throws ValueError when D == 0 or b^2 < epsilon_d.
double lemma2_lower_bound(const Vector& h_t, const Vector& h0, const Vector& grad_star, double c_t,
                          double epsilon_d);

// Gradient ascent on the MAP objective with adaptive step and optional
// Gaussian exploration:
//   h_{t+1} = h_t + alpha_t * grad + sqrt(alpha_t) * z
// States the probe already scores >= 0.5 are returned untouched.
OptimizeResult optimize_hidden_state(const Probe& p, const Vector& h0, const OptimizerConfig& cfg, RngStream& rng);

struct BatchOptimizeResult {
  std::vector<Vector> h_star;
  std::vector<double> f_initial;
  std::vector<double> f_final;
  std::vector<int> iterations;  // per-state steps taken
  int rounds = 0;               // shared step count
  double fraction_positive = 0.0;
};

// Jointly optimizes a batch of states with a shared round counter. Each
// state stops on its own once f > tau; the batch stops when at least
// `target_fraction` of it is above tau or after cfg.max_iters rounds.
// Noise is drawn in state order so results are deterministic.
BatchOptimizeResult optimize_batch(const Probe& p, const std::vector<Vector>& h0s, const OptimizerConfig& cfg,
                                   double target_fraction, RngStream& rng);

struct BoundsReport {
  std::vector<bool> in_bounds;
  double fraction_in_bounds = 0.0;
};

// Per step, whether lambda lies in [lemma2_lower, lemma1_upper]; an inactive
// upper bound counts as +inf and a missing lower bound as 0.
BoundsReport check_bounds(const OptimizerTrace& trace, double lambda);

// Columns: t,f,dist,alpha_t,grad_star_norm,grad_total_norm,cosine,
// lemma1_ub,lemma2_lb,in_bounds. Absent optionals are empty fields.
void write_trace_csv(std::ostream& out, const OptimizerTrace& trace);
OptimizerTrace read_trace_csv(std::istream& in);
inline constexpr const char* kTraceCsvHeader =
    "t,f,dist,alpha_t,grad_star_norm,grad_total_norm,cosine,lemma1_ub,lemma2_lb,in_bounds";

}  // namespace hsteer
