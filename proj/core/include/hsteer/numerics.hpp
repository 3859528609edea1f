#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "hsteer/error.hpp"

namespace hsteer {

// Dense real vector. Used for hidden states, gradients and steering
// directions. Arithmetic helpers check dimensions and throw DimensionError.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  Vector(std::initializer_list<double> init) : values_(init) {}
  explicit Vector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double s);

  double dot(const Vector& other) const;
  double squared_norm() const;
  double norm() const;
  bool all_finite() const;

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> values_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator*(double s, Vector v);

// Throws NumericError naming `what` if any entry is NaN/Inf, and
// ValueError if the vector is empty.
void require_finite(const Vector& v, std::string_view what);
void require_same_dim(const Vector& a, const Vector& b, std::string_view what);

// Squared Euclidean distance sum_i (a_i - b_i)^2. No 1/2 factor: the prior
// weight lambda absorbs it, which keeps the gradient at 2(h - h0).
double l2_distance(const Vector& a, const Vector& b);

// Gradient of l2_distance with respect to its first argument: 2(h - h0).
Vector distance_gradient(const Vector& h, const Vector& h0);

// (a.b) / (|a||b|), clamped to [-1, 1]. Zero-norm input throws ValueError.
double cosine_similarity(const Vector& a, const Vector& b);

// xoshiro256** seeded through splitmix64. The sequence for a seed is fixed
// on every platform; normals come from the polar Box-Muller transform, not
// from <random> distributions whose output is implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream; consumes one draw from this stream.
  RngStream split();

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// dim iid standard normal draws.
Vector gaussian_sample(std::size_t dim, RngStream& rng);

}  // namespace hsteer
