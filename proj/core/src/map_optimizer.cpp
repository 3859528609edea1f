#include "hsteer/map_optimizer.hpp"

#include <cmath>
#include <limits>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace hsteer {

namespace {

void check_finite_scalar(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

// One update from h_t; fills every field of `step` except t.
struct StepOutcome {
  Vector next;
  TraceStep step;
};

StepOutcome take_step(const Probe& p, const Vector& h_t, const Vector& h0, double f_t, double f_h0,
                      const OptimizerConfig& cfg, RngStream& rng) {
  StepOutcome out;
  TraceStep& s = out.step;
  const Vector grad_star = p.input_gradient(h_t);
  const Vector displacement = h_t - h0;
  Vector grad_total = grad_star;
  if (cfg.lambda != 0.0) grad_total -= (2.0 * cfg.lambda) * displacement;

  s.grad_likelihood_norm = grad_star.norm();
  s.grad_total_norm = grad_total.norm();
  if (s.grad_likelihood_norm > 0 && s.grad_total_norm > 0) s.cosine = cosine_similarity(grad_star, grad_total);
  if (s.grad_likelihood_norm > 0) s.lemma1_upper = lemma1_upper_bound(displacement, grad_star, cfg.epsilon_c);

  const double alpha = adaptive_step(cfg.alpha0, cfg.tau, f_t, f_h0, cfg.epsilon, cfg.denominator);
  s.step_size = alpha;

  out.next = h_t;
  for (std::size_t i = 0; i < out.next.dim(); ++i) out.next[i] += alpha * grad_total[i];
  if (cfg.noise_enabled) {
    const double scale = std::sqrt(alpha);
    for (std::size_t i = 0; i < out.next.dim(); ++i) out.next[i] += scale * rng.normal();
  }
  if (!out.next.all_finite()) return out;

  s.f_value = p.forward(out.next);
  s.distance_to_h0 = l2_distance(out.next, h0);

  const double d_norm = 2.0 * displacement.norm();
  const Vector moved = out.next - h0;
  if (d_norm > 0 && moved.norm() > 0) {
    const double c_t = cosine_similarity(moved, displacement);
    try {
      s.lemma2_lower = lemma2_lower_bound(h_t, h0, grad_star, c_t, cfg.epsilon_d);
    } catch (const ValueError&) {
      // epsilon_d larger than this state allows; leave the bound unset.
    }
  }
  const double upper = s.lemma1_upper.value_or(std::numeric_limits<double>::infinity());
  const double lower = s.lemma2_lower.value_or(0.0);
  s.bound_violated = !(cfg.lambda >= lower && cfg.lambda <= upper);
  return out;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(alpha0 > 0)) throw ValueError("OptimizerConfig: alpha0 must be > 0");
  if (!(lambda >= 0)) throw ValueError("OptimizerConfig: lambda must be >= 0");
  if (!(tau > 0 && tau < 1)) throw ValueError("OptimizerConfig: tau must be in (0, 1)");
  if (max_iters < 1) throw ValueError("OptimizerConfig: max_iters must be >= 1");
  if (!(epsilon > 0)) throw ValueError("OptimizerConfig: epsilon must be > 0");
  if (!(epsilon_c > 0 && epsilon_c < 1)) throw ValueError("OptimizerConfig: epsilon_c must be in (0, 1)");
  if (!(epsilon_d >= 0)) throw ValueError("OptimizerConfig: epsilon_d must be >= 0");
  check_finite_scalar(lambda, "OptimizerConfig::lambda");
  check_finite_scalar(alpha0, "OptimizerConfig::alpha0");
}

double objective(const Probe& p, const Vector& h, const Vector& h0, double lambda) {
  require_same_dim(h, h0, "objective");
  const double v = p.log_forward(h) - lambda * l2_distance(h, h0);
  check_finite_scalar(v, "objective");
  return v;
}

Vector objective_gradient(const Probe& p, const Vector& h, const Vector& h0, double lambda) {
  require_same_dim(h, h0, "objective_gradient");
  Vector g = p.input_gradient(h);
  if (lambda != 0.0) g -= lambda * distance_gradient(h, h0);
  require_finite(g, "objective_gradient");
  return g;
}

double adaptive_step(double alpha0, double tau, double f_ht, double f_h0, double epsilon,
                     StepDenominator denominator) {
  for (double v : {alpha0, tau, f_ht, f_h0, epsilon}) check_finite_scalar(v, "adaptive_step");
  if (!(epsilon > 0)) throw ValueError("adaptive_step: epsilon must be > 0");
  const double numer = std::abs(tau - f_ht);
  const double denom = denominator == StepDenominator::kOnePlus ? 1.0 + f_h0 : std::abs(f_h0) + epsilon;
  return alpha0 * numer / denom;
}

std::optional<double> lemma1_upper_bound(const Vector& h_t, const Vector& grad_star, double epsilon_c) {
  require_same_dim(h_t, grad_star, "lemma1_upper_bound");
  require_finite(h_t, "lemma1_upper_bound");
  require_finite(grad_star, "lemma1_upper_bound");
  const double g2 = grad_star.squared_norm();
  if (g2 == 0.0) throw ValueError("lemma1_upper_bound: zero likelihood gradient");
  const double denom = 2.0 * h_t.dot(grad_star);
  if (!(denom > 0)) return std::nullopt;
  return epsilon_c * g2 / denom;
}

double lemma2_lower_bound(const Vector& h_t, const Vector& h0, const Vector& grad_star, double c_t,
                          double epsilon_d) {
  require_same_dim(h_t, h0, "lemma2_lower_bound");
  require_same_dim(h_t, grad_star, "lemma2_lower_bound");
  const double g = grad_star.norm();
  const double h = std::sqrt(l2_distance(h_t, h0));
  const double d = 2.0 * h;
  if (d == 0.0) throw ValueError("lemma2_lower_bound: distance gradient is zero");
  const double b = g + h * c_t;
  double disc = b * b - epsilon_d;
  // Within rounding of b^2 the discriminant is indistinguishable from zero,
  // and sqrt would turn a few ulps into an error of order 1e-8.
  if (std::abs(disc) <= 8 * std::numeric_limits<double>::epsilon() * b * b) disc = 0.0;
  if (disc < 0) throw ValueError("lemma2_lower_bound: epsilon_d too large for current state");
  return std::max(0.0, (b - std::sqrt(disc)) / d);
}

OptimizeResult optimize_hidden_state(const Probe& p, const Vector& h0, const OptimizerConfig& cfg, RngStream& rng) {
  cfg.validate();
  require_finite(h0, "optimize_hidden_state");
  OptimizeResult result;
  result.f_initial = p.forward(h0);
  result.h_star = h0;
  result.f_final = result.f_initial;
  if (result.f_initial >= 0.5) {
    result.converged = result.f_initial > cfg.tau;
    return result;
  }

  Vector h = h0;
  double f = result.f_initial;
  for (int t = 0; t < cfg.max_iters; ++t) {
    StepOutcome out = take_step(p, h, h0, f, result.f_initial, cfg, rng);
    out.step.t = t;
    if (!out.next.all_finite()) {
      throw OptimizationError("optimize_hidden_state: non-finite state at step " + std::to_string(t),
                              std::move(result.trace));
    }
    result.trace.push_back(out.step);
    if (cfg.strict_bounds && out.step.bound_violated) {
      throw BoundsViolation("optimize_hidden_state: lambda outside bounds at step " + std::to_string(t),
                            std::move(result.trace));
    }
    h = std::move(out.next);
    f = out.step.f_value;
    result.iterations_used = t + 1;
    if (f > cfg.tau) break;
  }
  result.h_star = std::move(h);
  result.f_final = f;
  result.converged = f > cfg.tau;
  return result;
}

BatchOptimizeResult optimize_batch(const Probe& p, const std::vector<Vector>& h0s, const OptimizerConfig& cfg,
                                   double target_fraction, RngStream& rng) {
  cfg.validate();
  if (!(target_fraction > 0 && target_fraction <= 1)) {
    throw ValueError("optimize_batch: target_fraction must be in (0, 1]");
  }
  BatchOptimizeResult r;
  const std::size_t n = h0s.size();
  r.h_star = h0s;
  r.iterations.assign(n, 0);
  r.f_initial.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.f_initial[i] = p.forward(h0s[i]);
  r.f_final = r.f_initial;
  if (n == 0) {
    r.fraction_positive = 1.0;
    return r;
  }
  auto count_done = [&] {
    std::size_t k = 0;
    for (double f : r.f_final)
      if (f > cfg.tau) ++k;
    return k;
  };
  std::size_t done = count_done();
  while (r.rounds < cfg.max_iters &&
         static_cast<double>(done) < target_fraction * static_cast<double>(n) - 1e-12) {
    for (std::size_t i = 0; i < n; ++i) {
      if (r.f_final[i] > cfg.tau) continue;
      StepOutcome out = take_step(p, r.h_star[i], h0s[i], r.f_final[i], r.f_initial[i], cfg, rng);
      if (!out.next.all_finite()) {
        throw OptimizationError("optimize_batch: non-finite state in round " + std::to_string(r.rounds), {});
      }
      r.h_star[i] = std::move(out.next);
      r.f_final[i] = out.step.f_value;
      ++r.iterations[i];
    }
    ++r.rounds;
    done = count_done();
  }
  r.fraction_positive = static_cast<double>(done) / static_cast<double>(n);
  return r;
}

BoundsReport check_bounds(const OptimizerTrace& trace, double lambda) {
  BoundsReport rep;
  rep.in_bounds.reserve(trace.size());
  std::size_t ok = 0;
  for (const auto& s : trace) {
    const double upper = s.lemma1_upper.value_or(std::numeric_limits<double>::infinity());
    const double lower = s.lemma2_lower.value_or(0.0);
    const bool in = lambda >= lower && lambda <= upper;
    rep.in_bounds.push_back(in);
    if (in) ++ok;
  }
  rep.fraction_in_bounds = trace.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(trace.size());
  return rep;
}

void write_trace_csv(std::ostream& out, const OptimizerTrace& trace) {
  out << kTraceCsvHeader << "\n";
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << std::setprecision(17);
  for (const auto& s : trace) {
    out << s.t << ',' << s.f_value << ',' << s.distance_to_h0 << ',' << s.step_size << ',' << s.grad_likelihood_norm
        << ',' << s.grad_total_norm << ',';
    opt(s.cosine);
    out << ',';
    opt(s.lemma1_upper);
    out << ',';
    opt(s.lemma2_lower);
    out << ',' << (s.bound_violated ? 0 : 1) << "\n";
  }
}

OptimizerTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValueError("read_trace_csv: empty input");
  if (line != kTraceCsvHeader) throw ValueError("read_trace_csv: unexpected header '" + line + "'");
  OptimizerTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 10) throw ValueError("read_trace_csv: expected 10 fields in '" + line + "'");
    auto num = [](const std::string& s) { return std::stod(s); };
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return num(s);
    };
    TraceStep s;
    s.t = std::stoi(fields[0]);
    s.f_value = num(fields[1]);
    s.distance_to_h0 = num(fields[2]);
    s.step_size = num(fields[3]);
    s.grad_likelihood_norm = num(fields[4]);
    s.grad_total_norm = num(fields[5]);
    s.cosine = opt(fields[6]);
    s.lemma1_upper = opt(fields[7]);
    s.lemma2_lower = opt(fields[8]);
    s.bound_violated = fields[9] == "0";
    trace.push_back(s);
  }
  return trace;
}

}  // namespace hsteer
