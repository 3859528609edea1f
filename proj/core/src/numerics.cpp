#include "hsteer/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hsteer {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Vector& Vector::operator+=(const Vector& other) {
  require_same_dim(*this, other, "Vector::operator+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_dim(*this, other, "Vector::operator-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Vector& Vector::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

double Vector::dot(const Vector& other) const {
  require_same_dim(*this, other, "Vector::dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

double Vector::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

double Vector::norm() const { return std::sqrt(squared_norm()); }

bool Vector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Vector operator+(Vector a, const Vector& b) { return a += b; }
Vector operator-(Vector a, const Vector& b) { return a -= b; }
Vector operator*(double s, Vector v) { return v *= s; }

void require_finite(const Vector& v, std::string_view what) {
  if (v.empty()) throw ValueError(std::string(what) + ": empty vector");
  if (!v.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

void require_same_dim(const Vector& a, const Vector& b, std::string_view what) {
  if (a.dim() != b.dim()) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()) + ")");
  }
}

double l2_distance(const Vector& a, const Vector& b) {
  require_same_dim(a, b, "l2_distance");
  require_finite(a, "l2_distance");
  require_finite(b, "l2_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

Vector distance_gradient(const Vector& h, const Vector& h0) {
  require_same_dim(h, h0, "distance_gradient");
  require_finite(h, "distance_gradient");
  require_finite(h0, "distance_gradient");
  Vector g(h.dim());
  for (std::size_t i = 0; i < h.dim(); ++i) g[i] = 2.0 * (h[i] - h0[i]);
  return g;
}

double cosine_similarity(const Vector& a, const Vector& b) {
  require_same_dim(a, b, "cosine_similarity");
  require_finite(a, "cosine_similarity");
  require_finite(b, "cosine_similarity");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValueError("cosine_similarity: zero-norm input");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw ValueError("RngStream::uniform_int: n must be > 0");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

RngStream RngStream::split() { return RngStream(next_u64()); }

Vector gaussian_sample(std::size_t dim, RngStream& rng) {
  if (dim == 0) throw ValueError("gaussian_sample: dim must be >= 1");
  Vector z(dim);
  for (std::size_t i = 0; i < dim; ++i) z[i] = rng.normal();
  return z;
}

}  // namespace hsteer
