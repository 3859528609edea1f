#include "hsteer/probe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Core>
#include <json.hpp>

#include "hsteer/binary_io.hpp"

namespace hsteer {

namespace {

constexpr std::string_view kProbeMagic = "PROBE1";
constexpr std::uint32_t kProbeVersion = 1;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) = -softplus(-z)
double log_sigmoid(double z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

}  // namespace

std::string_view site_name(Site site) {
  switch (site) {
    case Site::kAttn: return "ATTN";
    case Site::kMlp: return "MLP";
    case Site::kIntLayer: return "INT_LAYER";
  }
  return "?";
}

Site parse_site(std::string_view text) {
  std::string up(text);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "ATTN" || up == "0") return Site::kAttn;
  if (up == "MLP" || up == "1") return Site::kMlp;
  if (up == "INT_LAYER" || up == "INT" || up == "INT-LAYER" || up == "2") return Site::kIntLayer;
  throw ValueError("unknown site '" + std::string(text) + "'");
}

std::string to_string(const SiteKey& key) {
  return "L" + std::to_string(key.layer) + "_" + std::string(site_name(key.site));
}

std::size_t ContrastiveDataset::count(int label) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                [label](const LabeledState& r) { return r.label == label; }));
}

Probe::Probe(std::size_t input_dim, std::size_t hidden_width)
    : input_dim_(input_dim),
      hidden_width_(hidden_width),
      w1_(input_dim * hidden_width, 0.0),
      b1_(hidden_width, 0.0),
      w2_(hidden_width, 0.0) {
  if (input_dim == 0 || hidden_width == 0) throw ValueError("Probe: dims must be >= 1");
}

Probe Probe::random(std::size_t input_dim, std::size_t hidden_width, RngStream& rng) {
  Probe p(input_dim, hidden_width);
  const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden_width));
  for (double& w : p.w1_) w = s1 * rng.normal();
  for (double& w : p.w2_) w = s2 * rng.normal();
  return p;
}

void Probe::check_input(const Vector& h, std::string_view what) const {
  if (h.dim() != input_dim_) {
    throw DimensionError(std::string(what) + ": probe expects dim " + std::to_string(input_dim_) + ", got " +
                         std::to_string(h.dim()));
  }
  require_finite(h, what);
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> w1_map(const Probe& p) {
  return {p.w1().data(), static_cast<Eigen::Index>(p.hidden_width()), static_cast<Eigen::Index>(p.input_dim())};
}

// W1 h + b1
Eigen::VectorXd hidden_pre(const Probe& p, const Vector& h) {
  const Eigen::Map<const Eigen::VectorXd> x(h.data(), static_cast<Eigen::Index>(p.input_dim()));
  const Eigen::Map<const Eigen::VectorXd> b(p.b1().data(), static_cast<Eigen::Index>(p.hidden_width()));
  return w1_map(p) * x + b;
}

}  // namespace

double Probe::logit(const Vector& h) const {
  check_input(h, "Probe::logit");
  const Eigen::VectorXd z = hidden_pre(*this, h);
  double z2 = b2_;
  for (std::size_t j = 0; j < hidden_width_; ++j) {
    if (z[j] > 0) z2 += w2_[j] * z[j];
  }
  return z2;
}

double Probe::forward(const Vector& h) const {
  const double f = sigmoid(logit(h));
  // Keep the output strictly inside (0, 1) even when the logit saturates.
  return std::clamp(f, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

double Probe::log_forward(const Vector& h) const { return log_sigmoid(logit(h)); }

Vector Probe::input_gradient(const Vector& h) const {
  check_input(h, "Probe::input_gradient");
  const Eigen::VectorXd z1 = hidden_pre(*this, h);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden_width_));
  double z2 = b2_;
  for (std::size_t j = 0; j < hidden_width_; ++j) {
    if (z1[j] > 0) {
      z2 += w2_[j] * z1[j];
      c[j] = w2_[j];
    }
  }
  // d log sigmoid(z2) / d z2 = 1 - sigmoid(z2) = sigmoid(-z2)
  c *= sigmoid(-z2);
  Vector g(input_dim_);
  Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(input_dim_)) = w1_map(*this).transpose() * c;
  return g;
}

bool Probe::all_finite() const {
  auto fin = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return fin(w1_) && fin(b1_) && fin(w2_) && std::isfinite(b2_);
}

double probe_forward(const Probe& p, const Vector& h) { return p.forward(h); }
Vector probe_input_gradient(const Probe& p, const Vector& h) { return p.input_gradient(h); }

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("TrainConfig: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ValueError("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
  if (hidden_width < 1) throw ValueError("TrainConfig: hidden_width must be >= 1");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) {
    throw ValueError("TrainConfig: holdout_fraction must be in [0, 1)");
  }
}

Probe train_probe(const ContrastiveDataset& data, const TrainConfig& cfg, std::vector<double>* epoch_losses) {
  cfg.validate();
  if (data.records.empty()) throw ValueError("train_probe: empty dataset");
  const std::size_t dim = data.dim();
  for (const auto& r : data.records) {
    if (r.h.dim() != dim) throw DimensionError("train_probe: records have mixed dims");
    if (r.label != 0 && r.label != 1) throw ValueError("train_probe: labels must be 0 or 1");
    require_finite(r.h, "train_probe");
  }
  if (data.count(0) == 0 || data.count(1) == 0) throw ValueError("train_probe: dataset needs both classes");

  RngStream rng(cfg.seed);
  Probe p = Probe::random(dim, cfg.hidden_width, rng);
  const std::size_t width = cfg.hidden_width;

  std::vector<std::size_t> order(data.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<double> gw1(width * dim), gb1(width), gw2(width), z1(width);
  if (epoch_losses) epoch_losses->clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(gw1.begin(), gw1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      std::fill(gw2.begin(), gw2.end(), 0.0);
      double gb2 = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const LabeledState& r = data.records[order[k]];
        double z2 = p.b2();
        for (std::size_t j = 0; j < width; ++j) {
          const double* row = &p.w1()[j * dim];
          double z = p.b1()[j];
          for (std::size_t i = 0; i < dim; ++i) z += row[i] * r.h[i];
          z1[j] = z;
          if (z > 0) z2 += p.w2()[j] * z;
        }
        const double y = r.label;
        loss_sum += -(y * log_sigmoid(z2) + (1 - y) * log_sigmoid(-z2));
        const double dz2 = sigmoid(z2) - y;
        gb2 += dz2;
        for (std::size_t j = 0; j < width; ++j) {
          if (z1[j] <= 0) continue;
          gw2[j] += dz2 * z1[j];
          const double dz1 = dz2 * p.w2()[j];
          gb1[j] += dz1;
          double* grow = &gw1[j * dim];
          for (std::size_t i = 0; i < dim; ++i) grow[i] += dz1 * r.h[i];
        }
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t i = 0; i < gw1.size(); ++i) p.w1()[i] -= scale * gw1[i];
      for (std::size_t j = 0; j < width; ++j) {
        p.b1()[j] -= scale * gb1[j];
        p.w2()[j] -= scale * gw2[j];
      }
      p.b2() -= scale * gb2;
    }
    if (epoch_losses) epoch_losses->push_back(loss_sum / static_cast<double>(order.size()));
    if (!p.all_finite()) throw NumericError("train_probe: parameters diverged at epoch " + std::to_string(epoch));
  }
  return p;
}

ProbeMetrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw ValueError("compute_metrics: empty input");
  if (scores.size() != labels.size()) throw DimensionError("compute_metrics: scores/labels length mismatch");

  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= 0.5;
    const bool pos = labels[i] == 1;
    if (pred && pos) ++tp;
    else if (pred && !pos) ++fp;
    else if (!pred && pos) ++fn;
    else ++tn;
  }
  ProbeMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  const std::size_t denom = 2 * tp + fp + fn;
  m.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);

  // Mann-Whitney U via average ranks.
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  const double n_pos = static_cast<double>(tp + fn);
  const double n_neg = static_cast<double>(fp + tn);
  if (n_pos == 0 || n_neg == 0) {
    m.roc_auc = 0.5;
  } else {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == 1) rank_sum += rank[i];
    m.roc_auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
  }
  return m;
}

ProbeMetrics evaluate_probe(const Probe& p, const ContrastiveDataset& data) {
  if (data.records.empty()) throw ValueError("evaluate_probe: empty dataset");
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(data.records.size());
  labels.reserve(data.records.size());
  for (const auto& r : data.records) {
    scores.push_back(p.forward(r.h));
    labels.push_back(r.label);
  }
  return compute_metrics(scores, labels);
}

BankEntry train_and_evaluate(const ContrastiveDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.records.empty()) throw ValueError("train_and_evaluate: empty dataset");
  std::vector<std::size_t> order(data.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream split_rng(cfg.seed ^ 0x5eedULL);
  split_rng.shuffle(order);
  const auto n_eval = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(order.size())));
  ContrastiveDataset train{{}, data.layer, data.site};
  ContrastiveDataset eval{{}, data.layer, data.site};
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_eval ? eval : train).records.push_back(data.records[order[k]]);
  }
  BankEntry entry;
  entry.probe = train_probe(train, cfg);
  entry.metrics = evaluate_probe(entry.probe, eval.records.empty() ? train : eval);
  return entry;
}

Site best_site(const ProbeBank& bank) {
  if (bank.empty()) throw ValueError("best_site: empty bank");
  Site best = Site::kAttn;
  double best_mean = -1.0;
  for (Site s : kAllSites) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [key, entry] : bank) {
      if (key.site == s) {
        sum += entry.metrics.f1;
        ++n;
      }
    }
    if (n == 0) continue;
    const double mean = sum / n;
    if (mean > best_mean) {
      best_mean = mean;
      best = s;
    }
  }
  return best;
}

std::vector<SiteKey> select_sites(const ProbeBank& bank, double top_fraction, std::optional<Site> site) {
  if (bank.empty()) throw ValueError("select_sites: empty bank");
  if (!(top_fraction > 0 && top_fraction <= 1)) throw ValueError("select_sites: top_fraction must be in (0, 1]");
  const Site chosen = site.value_or(best_site(bank));
  std::vector<std::pair<SiteKey, double>> layers;
  for (const auto& [key, entry] : bank)
    if (key.site == chosen) layers.emplace_back(key, entry.metrics.f1);
  if (layers.empty()) throw ValueError("select_sites: no probes for site " + std::string(site_name(chosen)));
  std::stable_sort(layers.begin(), layers.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first.layer < b.first.layer;
  });
  const auto keep = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(layers.size()) - 1e-12));
  std::vector<SiteKey> out;
  for (std::size_t i = 0; i < keep && i < layers.size(); ++i) out.push_back(layers[i].first);
  return out;
}

std::vector<std::uint8_t> encode_probe(const Probe& p) {
  ByteWriter w;
  w.raw(kProbeMagic);
  w.u32(kProbeVersion);
  w.u32(static_cast<std::uint32_t>(p.input_dim()));
  w.u32(static_cast<std::uint32_t>(p.hidden_width()));
  for (double v : p.w1()) w.f32(static_cast<float>(v));
  for (double v : p.b1()) w.f32(static_cast<float>(v));
  for (double v : p.w2()) w.f32(static_cast<float>(v));
  w.f32(static_cast<float>(p.b2()));
  return w.take();
}

Probe decode_probe(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kProbeMagic.size() || r.raw(kProbeMagic.size()) != kProbeMagic) {
    throw FormatError("bad magic", "not a PROBE1 blob");
  }
  const std::uint32_t version = r.u32();
  if (version != kProbeVersion) throw FormatError("version mismatch", "PROBE1 version " + std::to_string(version));
  const std::uint32_t dim = r.u32();
  const std::uint32_t width = r.u32();
  if (dim == 0 || width == 0) throw FormatError("bad header", "zero probe dimension");
  const std::uint64_t n_params = static_cast<std::uint64_t>(dim) * width + 2ULL * width + 1ULL;
  if (n_params * 4 != r.remaining()) throw FormatError("truncated", "PROBE1 parameter block size mismatch");
  Probe p(dim, width);
  for (double& v : p.w1()) v = r.f32();
  for (double& v : p.b1()) v = r.f32();
  for (double& v : p.w2()) v = r.f32();
  p.b2() = r.f32();
  return p;
}

void save_probe(const Probe& p, const std::filesystem::path& path) { write_file_bytes(path, encode_probe(p)); }

Probe load_probe(const std::filesystem::path& path) { return decode_probe(read_file_bytes(path)); }

void save_probe_bank(const ProbeBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [key, entry] : bank) {
    const std::string file = to_string(key) + ".probe";
    save_probe(entry.probe, dir / file);
    j.push_back({{"layer", key.layer},
                 {"site", std::string(site_name(key.site))},
                 {"file", file},
                 {"accuracy", entry.metrics.accuracy},
                 {"f1", entry.metrics.f1},
                 {"roc_auc", entry.metrics.roc_auc}});
  }
  std::ofstream out(dir / "bank.json");
  if (!out) throw IoError("cannot write " + (dir / "bank.json").string());
  out << j.dump(2) << "\n";
}

ProbeBank load_probe_bank(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bank.json");
  if (!in) throw IoError("cannot open " + (dir / "bank.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad json", e.what());
  }
  ProbeBank bank;
  for (const auto& item : j) {
    SiteKey key{item.at("layer").get<int>(), parse_site(item.at("site").get<std::string>())};
    BankEntry entry;
    entry.probe = load_probe(dir / item.at("file").get<std::string>());
    entry.metrics = {item.at("accuracy").get<double>(), item.at("f1").get<double>(), item.at("roc_auc").get<double>()};
    bank.emplace(key, std::move(entry));
  }
  return bank;
}

}  // namespace hsteer
