#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "hsteer/numerics.hpp"
#include "hsteer/probe.hpp"

namespace hsteer {

// Additive control-vector constructions.
enum class ControlMethod : std::uint8_t { kDiM = 0, kPca = 1, kLr = 2 };

std::string_view method_name(ControlMethod m);

struct ControlVector {
  Vector direction;
  double strength = 1.0;
  ControlMethod method = ControlMethod::kDiM;
  bool unit_normalized = false;
};

struct Hyperplane {
  Vector normal;
  double bias = 0.0;

  // normal . h + bias; positive side is the target class.
  double score(const Vector& h) const;
};

// Fit hyperparameters shared by lr_vector and svm_train.
struct LinearFitConfig {
  int epochs = 200;
  double learning_rate = 0.01;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

// mean(pos) - mean(neg). A zero result throws ValueError.
ControlVector dim_vector(const std::vector<Vector>& pos, const std::vector<Vector>& neg);

// Top principal direction (uncentered second moment) of the paired
// differences pos[i] - neg[i], unit length, sign chosen so that it has a
// non-negative dot product with the mean difference.
ControlVector pca_vector(const std::vector<Vector>& pos, const std::vector<Vector>& neg);

// Logistic regression by full-batch gradient descent; the weight vector is
// the control direction.
ControlVector lr_vector(const ContrastiveDataset& data, const LinearFitConfig& cfg = {});

// h + strength * direction (direction used as stored).
Vector apply_control(const Vector& h, const ControlVector& cv);

// Linear SVM: full-batch subgradient descent on mean hinge loss plus
// (l2 / 2) |w|^2. Labels 1 / 0 map to +1 / -1.
Hyperplane svm_train(const ContrastiveDataset& data, const LinearFitConfig& cfg = {});

// Orthogonal projection of h onto {x : normal . x + bias = 0}.
Vector svm_project(const Vector& h, const Hyperplane& plane);

// h - (h . v_hat) v_hat
Vector directional_ablation(const Vector& h, const Vector& v);

// Binary envelope shared by the steering artifacts: magic "STEER1",
// u32 version, u8 kind (0 control, 1 hyperplane), u8 method tag,
// u32 dim, f32 scalar (strength or bias), then dim f32 values.
std::vector<std::uint8_t> encode_control(const ControlVector& cv);
ControlVector decode_control(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_hyperplane(const Hyperplane& plane);
Hyperplane decode_hyperplane(std::span<const std::uint8_t> bytes);

}  // namespace hsteer
