#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hsteer/numerics.hpp"
#include "hsteer/probe.hpp"

namespace hsteer {

// Word-level vocabulary; token text is split on whitespace.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& text(int id) const;
  bool contains(std::string_view token) const;
  // Throws ValueError for an unknown token.
  int id(std::string_view token) const;
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ModelConfig {
  int vocab_size = 64;
  int embed_dim = 64;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_dim = 256;
  int context_len = 128;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Pre-LayerNorm decoder-only transformer with learned positional
// embeddings, ReLU feed-forward blocks and an untied output head.
// Parameters live in one flat buffer; see layout() in toy_lm.cpp.
class ToyModel {
 public:
  ToyModel() = default;
  ToyModel(ModelConfig cfg, Vocab vocab, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  // Id of "<eos>", or -1 when the vocabulary has none.
  int eos_id() const { return eos_id_; }

  friend bool operator==(const ToyModel&, const ToyModel&) = default;

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  std::vector<double> params_;
  int eos_id_ = -1;
};

std::size_t parameter_count(const ModelConfig& cfg);

struct CaptureKey {
  int layer = 0;
  Site site = Site::kIntLayer;
  std::size_t position = 0;
  auto operator<=>(const CaptureKey&) const = default;
};

// Hidden states by (layer, site, position). All sites have embed_dim entries.
using CaptureSet = std::map<CaptureKey, Vector>;

// Called once per (layer, site) for each block of new positions, after the
// site value is computed and before it is consumed downstream. `block`
// holds `rows` row-major states of width embed_dim for positions
// first_position .. first_position + rows - 1 and may be modified in place.
using BlockHook =
    std::function<void(const SiteKey& key, std::size_t first_position, std::size_t rows, std::span<double> block)>;

// Incremental forward pass with a key/value cache. States written by a hook
// are what later positions attend to.
class DecodeSession {
 public:
  explicit DecodeSession(const ToyModel& model);
  ~DecodeSession();
  DecodeSession(DecodeSession&&) noexcept;
  DecodeSession& operator=(DecodeSession&&) noexcept;

  // Feeds `tokens` after the current prefix. Returns logits at the last new
  // position. Throws ValueError on context overflow or unknown token ids.
  std::vector<double> append(std::span<const int> tokens, const BlockHook& hook = {},
                             CaptureSet* capture = nullptr);

  std::size_t length() const;
  const std::vector<int>& tokens() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

struct ForwardResult {
  std::vector<double> distribution;  // next-token distribution after the last token
  std::vector<double> logits;
  CaptureSet capture;
};

ForwardResult forward_with_capture(const ToyModel& m, std::span<const int> tokens, const BlockHook& hook = {});

// Next-token distribution at `position`, recomputing only what follows the
// state at `key`: the part of layer key.layer after that site, then layers
// key.layer+1 .. L-1 and the head. Values for `key` are read from
// `overridden` (all positions up to `position` must be present), together
// with the layer inputs they combine with.
std::vector<double> resume_from_layer(const ToyModel& m, std::span<const int> tokens, const CaptureSet& overridden,
                                      const SiteKey& key, std::size_t position);

// exp(mean negative log-likelihood) of tokens[score_from..] under teacher
// forcing. score_from >= 1.
double perplexity(const ToyModel& m, std::span<const int> tokens, std::size_t score_from = 1);

struct LmTrainConfig {
  int epochs = 60;
  double learning_rate = 3e-3;
  int batch_size = 8;  // sequences per optimizer step
  double grad_clip = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LmTrainReport {
  std::vector<double> epoch_loss;
  double initial_perplexity = 0.0;
  double final_perplexity = 0.0;
};

// Produces the training sequences for an epoch.
using EpochCorpus = std::function<std::vector<std::vector<int>>(int epoch)>;

// Next-token cross-entropy with Adam, linear warmup and cosine decay.
ToyModel train_toy_lm(const EpochCorpus& corpus, const Vocab& vocab, const ModelConfig& cfg,
                      const LmTrainConfig& train, LmTrainReport* report = nullptr);
ToyModel train_toy_lm(const std::vector<std::vector<int>>& corpus, const Vocab& vocab, const ModelConfig& cfg,
                      const LmTrainConfig& train, LmTrainReport* report = nullptr);

// Mean next-token cross-entropy of `tokens` and its parameter gradient.
// Exposed for gradient checking.
double loss_and_gradient(const ToyModel& m, std::span<const int> tokens, std::vector<double>* grad);

// TOYLM1 checkpoint: magic "TOYLM1", u32 version, six u32 architecture
// fields, u32 vocab count then length-prefixed token strings, u64 parameter
// count, f32 parameters little-endian.
std::vector<std::uint8_t> encode_model(const ToyModel& m);
ToyModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const ToyModel& m, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);

}  // namespace hsteer
