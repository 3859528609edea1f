#include "hsteer/steering.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "hsteer/binary_io.hpp"

namespace hsteer {

namespace {

constexpr std::string_view kSteerMagic = "STEER1";
constexpr std::uint32_t kSteerVersion = 1;

Vector mean_of(const std::vector<Vector>& xs, std::string_view what) {
  if (xs.empty()) throw ValueError(std::string(what) + ": empty list");
  Vector m(xs.front().dim());
  for (const auto& x : xs) {
    require_same_dim(m, x, what);
    require_finite(x, what);
    m += x;
  }
  m *= 1.0 / static_cast<double>(xs.size());
  return m;
}

void check_two_class(const ContrastiveDataset& data, std::string_view what) {
  if (data.records.empty()) throw ValueError(std::string(what) + ": empty dataset");
  if (data.count(0) == 0 || data.count(1) == 0) throw ValueError(std::string(what) + ": dataset needs both classes");
  const std::size_t dim = data.dim();
  for (const auto& r : data.records) {
    if (r.h.dim() != dim) throw DimensionError(std::string(what) + ": records have mixed dims");
    require_finite(r.h, what);
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string_view method_name(ControlMethod m) {
  switch (m) {
    case ControlMethod::kDiM: return "DIM";
    case ControlMethod::kPca: return "PCA";
    case ControlMethod::kLr: return "LR";
  }
  return "?";
}

double Hyperplane::score(const Vector& h) const { return normal.dot(h) + bias; }

ControlVector dim_vector(const std::vector<Vector>& pos, const std::vector<Vector>& neg) {
  Vector d = mean_of(pos, "dim_vector") - mean_of(neg, "dim_vector");
  if (d.norm() == 0.0) throw ValueError("dim_vector: class means coincide (zero direction)");
  return ControlVector{std::move(d), 1.0, ControlMethod::kDiM, false};
}

ControlVector pca_vector(const std::vector<Vector>& pos, const std::vector<Vector>& neg) {
  if (pos.size() != neg.size()) throw DimensionError("pca_vector: pos/neg must be paired (equal length)");
  if (pos.size() < 2) throw ValueError("pca_vector: need at least 2 pairs");
  const std::size_t dim = pos.front().dim();
  const auto n = static_cast<Eigen::Index>(pos.size());
  Eigen::MatrixXd diffs(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = pos[static_cast<std::size_t>(i)];
    const auto& b = neg[static_cast<std::size_t>(i)];
    require_same_dim(a, pos.front(), "pca_vector");
    require_same_dim(a, b, "pca_vector");
    require_finite(a, "pca_vector");
    require_finite(b, "pca_vector");
    for (std::size_t j = 0; j < dim; ++j) diffs(i, static_cast<Eigen::Index>(j)) = a[j] - b[j];
  }
  if (diffs.squaredNorm() == 0.0) throw ValueError("pca_vector: all differences are zero");
  const Eigen::MatrixXd moment = diffs.transpose() * diffs / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(moment);
  if (eig.info() != Eigen::Success) throw NumericError("pca_vector: eigen decomposition failed");
  Eigen::VectorXd top = eig.eigenvectors().col(static_cast<Eigen::Index>(dim) - 1);
  const Eigen::VectorXd mean = diffs.colwise().mean().transpose();
  if (top.dot(mean) < 0) top = -top;
  Vector dir(dim);
  for (std::size_t j = 0; j < dim; ++j) dir[j] = top(static_cast<Eigen::Index>(j));
  return ControlVector{std::move(dir), 1.0, ControlMethod::kPca, true};
}

ControlVector lr_vector(const ContrastiveDataset& data, const LinearFitConfig& cfg) {
  check_two_class(data, "lr_vector");
  const auto& first = data.records.front().h;
  const bool constant = std::all_of(data.records.begin(), data.records.end(),
                                    [&](const LabeledState& r) { return r.h == first; });
  if (constant) throw ValueError("lr_vector: constant features, no separating direction");

  const std::size_t dim = data.dim();
  const double n = static_cast<double>(data.records.size());
  Vector w(dim);
  double b = 0.0;
  Vector grad(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (const auto& r : data.records) {
      const double err = sigmoid(w.dot(r.h) + b) - r.label;
      for (std::size_t j = 0; j < dim; ++j) grad[j] += err * r.h[j];
      gb += err;
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] -= cfg.learning_rate * (grad[j] / n + cfg.l2 * w[j]);
    b -= cfg.learning_rate * gb / n;
  }
  if (!w.all_finite()) throw NumericError("lr_vector: weights diverged");
  if (w.norm() == 0.0) throw ValueError("lr_vector: zero weight vector");
  return ControlVector{std::move(w), 1.0, ControlMethod::kLr, false};
}

Vector apply_control(const Vector& h, const ControlVector& cv) {
  require_same_dim(h, cv.direction, "apply_control");
  Vector out = h;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] += cv.strength * cv.direction[i];
  return out;
}

Hyperplane svm_train(const ContrastiveDataset& data, const LinearFitConfig& cfg) {
  check_two_class(data, "svm_train");
  const std::size_t dim = data.dim();
  const double n = static_cast<double>(data.records.size());
  Vector w(dim);
  double b = 0.0;
  Vector grad(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (const auto& r : data.records) {
      const double y = r.label == 1 ? 1.0 : -1.0;
      if (y * (w.dot(r.h) + b) < 1.0) {
        for (std::size_t j = 0; j < dim; ++j) grad[j] -= y * r.h[j];
        gb -= y;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] -= cfg.learning_rate * (grad[j] / n + cfg.l2 * w[j]);
    b -= cfg.learning_rate * gb / n;
  }
  if (!w.all_finite()) throw NumericError("svm_train: weights diverged");
  if (w.norm() == 0.0) throw ValueError("svm_train: zero normal");
  return Hyperplane{std::move(w), b};
}

Vector svm_project(const Vector& h, const Hyperplane& plane) {
  require_same_dim(h, plane.normal, "svm_project");
  require_finite(h, "svm_project");
  const double nn = plane.normal.squared_norm();
  if (nn == 0.0) throw ValueError("svm_project: zero normal");
  const double k = plane.score(h) / nn;
  Vector out = h;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] -= k * plane.normal[i];
  return out;
}

Vector directional_ablation(const Vector& h, const Vector& v) {
  require_same_dim(h, v, "directional_ablation");
  require_finite(h, "directional_ablation");
  require_finite(v, "directional_ablation");
  const double vv = v.squared_norm();
  if (vv == 0.0) throw ValueError("directional_ablation: zero direction");
  const double k = h.dot(v) / vv;
  Vector out = h;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] -= k * v[i];
  return out;
}

namespace {

std::vector<std::uint8_t> encode_envelope(std::uint8_t kind, std::uint8_t tag, double scalar, const Vector& v) {
  ByteWriter w;
  w.raw(kSteerMagic);
  w.u32(kSteerVersion);
  w.u8(kind);
  w.u8(tag);
  w.u32(static_cast<std::uint32_t>(v.dim()));
  w.f32(static_cast<float>(scalar));
  for (double x : v) w.f32(static_cast<float>(x));
  return w.take();
}

struct Envelope {
  std::uint8_t kind;
  std::uint8_t tag;
  double scalar;
  Vector values;
};

Envelope decode_envelope(std::span<const std::uint8_t> bytes, std::uint8_t expected_kind) {
  ByteReader r(bytes);
  if (r.remaining() < kSteerMagic.size() || r.raw(kSteerMagic.size()) != kSteerMagic) {
    throw FormatError("bad magic", "not a STEER1 blob");
  }
  const std::uint32_t version = r.u32();
  if (version != kSteerVersion) throw FormatError("version mismatch", "STEER1 version " + std::to_string(version));
  Envelope e;
  e.kind = r.u8();
  if (e.kind != expected_kind) throw FormatError("wrong kind", "STEER1 kind " + std::to_string(e.kind));
  e.tag = r.u8();
  const std::uint32_t dim = r.u32();
  e.scalar = r.f32();
  if (static_cast<std::uint64_t>(dim) * 4 != r.remaining()) throw FormatError("truncated", "STEER1 payload size");
  e.values = Vector(dim);
  for (std::size_t i = 0; i < dim; ++i) e.values[i] = r.f32();
  return e;
}

}  // namespace

std::vector<std::uint8_t> encode_control(const ControlVector& cv) {
  std::uint8_t tag = static_cast<std::uint8_t>(cv.method);
  if (cv.unit_normalized) tag |= 0x80;
  return encode_envelope(0, tag, cv.strength, cv.direction);
}

ControlVector decode_control(std::span<const std::uint8_t> bytes) {
  Envelope e = decode_envelope(bytes, 0);
  const std::uint8_t m = e.tag & 0x7f;
  if (m > 2) throw FormatError("invalid enum", "control method tag " + std::to_string(m));
  return ControlVector{std::move(e.values), e.scalar, static_cast<ControlMethod>(m), (e.tag & 0x80) != 0};
}

std::vector<std::uint8_t> encode_hyperplane(const Hyperplane& plane) {
  return encode_envelope(1, 0, plane.bias, plane.normal);
}

Hyperplane decode_hyperplane(std::span<const std::uint8_t> bytes) {
  Envelope e = decode_envelope(bytes, 1);
  return Hyperplane{std::move(e.values), e.scalar};
}

}  // namespace hsteer
