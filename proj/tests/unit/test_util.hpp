#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "hsteer/numerics.hpp"
#include "hsteer/probe.hpp"

namespace hsteer::testing {

inline Vector random_vector(std::size_t dim, RngStream& rng, double scale = 1.0) {
  Vector v(dim);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// f(h) = sigmoid(w . h + b) everywhere, built from relu(z) - relu(-z) = z.
inline Probe linear_probe(const Vector& w, double b = 0.0) {
  Probe p(w.dim(), 2);
  for (std::size_t i = 0; i < w.dim(); ++i) {
    p.w1()[i] = w[i];
    p.w1()[w.dim() + i] = -w[i];
  }
  p.w2() = {1.0, -1.0};
  p.b2() = b;
  return p;
}

// Two Gaussian blobs in 2D at (+-2, 0) with the given spread.
inline ContrastiveDataset blobs(std::size_t per_class, double sigma, std::uint64_t seed) {
  RngStream rng(seed);
  ContrastiveDataset d;
  for (std::size_t i = 0; i < per_class; ++i) {
    d.records.push_back({Vector{2 + sigma * rng.normal(), sigma * rng.normal()}, 1});
    d.records.push_back({Vector{-2 + sigma * rng.normal(), sigma * rng.normal()}, 0});
  }
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("hsteer_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace hsteer::testing
