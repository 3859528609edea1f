#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsteer/numerics.hpp"

namespace hsteer {

// Which intra-layer activation a hidden state was read from.
//   kAttn      attention block output, before the residual add
//   kMlp       feed-forward block output, before the residual add
//   kIntLayer  post-residual output of the whole layer
enum class Site : std::uint8_t { kAttn = 0, kMlp = 1, kIntLayer = 2 };

inline constexpr Site kAllSites[] = {Site::kAttn, Site::kMlp, Site::kIntLayer};

std::string_view site_name(Site site);
// Accepts "ATTN", "MLP", "INT_LAYER" (case-insensitive) and "0".."2".
Site parse_site(std::string_view text);

struct SiteKey {
  int layer = 0;
  Site site = Site::kIntLayer;
  auto operator<=>(const SiteKey&) const = default;
};

std::string to_string(const SiteKey& key);

struct LabeledState {
  Vector h;
  int label = 0;   // 1 = target mode, 0 = other mode
  int group = -1;  // source problem, -1 when unknown
};

struct ContrastiveDataset {
  std::vector<LabeledState> records;
  int layer = 0;
  Site site = Site::kIntLayer;

  std::size_t dim() const { return records.empty() ? 0 : records.front().h.dim(); }
  std::size_t count(int label) const;
};

// Two-layer perceptron f(h) = sigmoid(w2 . relu(W1 h + b1) + b2).
// W1 is stored row-major, hidden_width x input_dim.
class Probe {
 public:
  Probe() = default;
  // All-zero parameters.
  Probe(std::size_t input_dim, std::size_t hidden_width);
  // He-scaled normal init for W1, 1/sqrt(width) for w2, zero biases.
  static Probe random(std::size_t input_dim, std::size_t hidden_width, RngStream& rng);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_width() const { return hidden_width_; }

  std::vector<double>& w1() { return w1_; }
  const std::vector<double>& w1() const { return w1_; }
  std::vector<double>& b1() { return b1_; }
  const std::vector<double>& b1() const { return b1_; }
  std::vector<double>& w2() { return w2_; }
  const std::vector<double>& w2() const { return w2_; }
  double& b2() { return b2_; }
  double b2() const { return b2_; }

  // Pre-sigmoid score.
  double logit(const Vector& h) const;
  double forward(const Vector& h) const;
  // log f(h), computed without forming f so it stays finite for large |logit|.
  double log_forward(const Vector& h) const;
  // Closed-form gradient of log f(h) with respect to h. The rectifier's
  // derivative at exactly zero pre-activation is taken as 0.
  Vector input_gradient(const Vector& h) const;

  bool all_finite() const;
  friend bool operator==(const Probe&, const Probe&) = default;

 private:
  void check_input(const Vector& h, std::string_view what) const;

  std::size_t input_dim_ = 0;
  std::size_t hidden_width_ = 0;
  std::vector<double> w1_;
  std::vector<double> b1_;
  std::vector<double> w2_;
  double b2_ = 0.0;
};

double probe_forward(const Probe& p, const Vector& h);
Vector probe_input_gradient(const Probe& p, const Vector& h);

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.001;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t hidden_width = 64;
  // Fraction of records held out for evaluation by train_probe_bank.
  double holdout_fraction = 0.2;

  void validate() const;
};

// Minibatch SGD on mean binary cross-entropy. When `epoch_losses` is given
// it receives the mean training loss of each epoch.
Probe train_probe(const ContrastiveDataset& data, const TrainConfig& cfg,
                  std::vector<double>* epoch_losses = nullptr);

struct ProbeMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;
};

// Threshold 0.5 (score >= 0.5 is a positive prediction) for accuracy and F1.
// ROC-AUC is the Mann-Whitney statistic with ties counted as 1/2; it is 0.5
// when only one class is present.
ProbeMetrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels);
ProbeMetrics evaluate_probe(const Probe& p, const ContrastiveDataset& data);

struct BankEntry {
  Probe probe;
  ProbeMetrics metrics;
};

using ProbeBank = std::map<SiteKey, BankEntry>;

// Splits `data` with a seeded shuffle, trains on the first part and scores on
// the held-out part.
BankEntry train_and_evaluate(const ContrastiveDataset& data, const TrainConfig& cfg);

// Site type with the best mean F1 across its layers (ties: ATTN < MLP < INT).
Site best_site(const ProbeBank& bank);

// The ceil(top_fraction * n_layers) layers of `site` (best_site(bank) when
// unset) with the highest F1, in descending F1 order; ties go to the lower
// layer index.
std::vector<SiteKey> select_sites(const ProbeBank& bank, double top_fraction,
                                  std::optional<Site> site = std::nullopt);

// PROBE1 envelope: magic "PROBE1", u32 version, u32 input_dim,
// u32 hidden_width, then f32 little-endian W1 (row-major), b1, w2, b2.
std::vector<std::uint8_t> encode_probe(const Probe& p);
Probe decode_probe(std::span<const std::uint8_t> bytes);
void save_probe(const Probe& p, const std::filesystem::path& path);
Probe load_probe(const std::filesystem::path& path);

// Bank on disk: one PROBE1 file per key plus bank.json holding metrics.
void save_probe_bank(const ProbeBank& bank, const std::filesystem::path& dir);
ProbeBank load_probe_bank(const std::filesystem::path& dir);

}  // namespace hsteer
