#include "hsteer/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "hsteer/binary_io.hpp"

namespace hsteer {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Col = Eigen::VectorXd;
using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MapMat = Eigen::Map<Mat>;
using CMapMat = Eigen::Map<const Mat>;
using CMapRow = Eigen::Map<const Row>;
using MapRow = Eigen::Map<Row>;

constexpr double kLnEps = 1e-5;
constexpr std::string_view kModelMagic = "TOYLM1";
constexpr std::uint32_t kModelVersion = 1;

struct LayerLayout {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Layout {
  std::size_t tok, pos, lnf_g, lnf_b, wout, bout, total;
  std::vector<LayerLayout> layers;
};

Layout make_layout(const ModelConfig& c) {
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto E = static_cast<std::size_t>(c.embed_dim);
  const auto F = static_cast<std::size_t>(c.ffn_dim);
  const auto C = static_cast<std::size_t>(c.context_len);
  Layout l{};
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.tok = take(V * E);
  l.pos = take(C * E);
  for (int i = 0; i < c.n_layers; ++i) {
    LayerLayout ll{};
    ll.ln1_g = take(E);
    ll.ln1_b = take(E);
    ll.wq = take(E * E);
    ll.wk = take(E * E);
    ll.wv = take(E * E);
    ll.wo = take(E * E);
    ll.ln2_g = take(E);
    ll.ln2_b = take(E);
    ll.w1 = take(E * F);
    ll.b1 = take(F);
    ll.w2 = take(F * E);
    ll.b2 = take(E);
    l.layers.push_back(ll);
  }
  l.lnf_g = take(E);
  l.lnf_b = take(E);
  l.wout = take(E * V);
  l.bout = take(V);
  l.total = off;
  return l;
}

// Read-only views of one model's parameters.
struct Weights {
  const ModelConfig& c;
  const Layout lay;
  const double* p;

  Weights(const ModelConfig& cfg, const std::vector<double>& params) : c(cfg), lay(make_layout(cfg)), p(params.data()) {}

  CMapMat mat(std::size_t off, int rows, int cols) const { return CMapMat(p + off, rows, cols); }
  CMapRow row(std::size_t off, int n) const { return CMapRow(p + off, n); }
};

// Parameter-gradient buffer with the same layout.
struct Grads {
  double* g;
  MapMat mat(std::size_t off, int rows, int cols) const { return MapMat(g + off, rows, cols); }
  MapRow row(std::size_t off, int n) const { return MapRow(g + off, n); }
};

struct LnCache {
  Mat xhat;
  Col rstd;
};

Mat layer_norm(const Mat& x, CMapRow gain, CMapRow bias, LnCache* cache) {
  const Eigen::Index n = x.cols();
  Col mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Col var = centered.array().square().rowwise().sum() / static_cast<double>(n);
  Col rstd = (var.array() + kLnEps).rsqrt();
  Mat xhat = centered.array().colwise() * rstd.array();
  Mat y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// dy -> dx; accumulates dgain and dbias.
Mat layer_norm_backward(const Mat& dy, const LnCache& cache, CMapRow gain, MapRow dgain, MapRow dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.array();
  const double n = static_cast<double>(dy.cols());
  Col mean_d = dxhat.rowwise().sum() / n;
  Col mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum() / n;
  Mat dx = dxhat;
  dx.colwise() -= mean_d;
  dx.array() -= cache.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= cache.rstd.array();
  return dx;
}

void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

struct LayerActs {
  Mat x_in;
  LnCache ln1;
  Mat a1, q, k, v;
  std::vector<Mat> probs;
  Mat attn_cat, attn_out, mid;
  LnCache ln2;
  Mat a2, u, r, mlp_out, x_out;
};

struct BlockActs {
  std::vector<LayerActs> layers;
  LnCache lnf;
  Mat af;
  Mat logits;
};

struct KvCache {
  std::vector<Mat> k, v;  // per layer, rows = cached positions
};

void apply_hook(const BlockHook& hook, int layer, Site site, std::size_t first, Mat& block) {
  if (!hook) return;
  hook(SiteKey{layer, site}, first, static_cast<std::size_t>(block.rows()),
       std::span<double>(block.data(), static_cast<std::size_t>(block.size())));
  if (!block.allFinite()) throw NumericError("hook produced a non-finite state at layer " + std::to_string(layer));
}

void capture_rows(CaptureSet* capture, int layer, Site site, std::size_t first, const Mat& block) {
  if (!capture) return;
  for (Eigen::Index i = 0; i < block.rows(); ++i) {
    Vector v(static_cast<std::size_t>(block.cols()));
    for (Eigen::Index j = 0; j < block.cols(); ++j) v[static_cast<std::size_t>(j)] = block(i, j);
    (*capture)[CaptureKey{layer, site, first + static_cast<std::size_t>(i)}] = std::move(v);
  }
}

Mat embed(const Weights& w, std::span<const int> tokens, std::size_t first_pos) {
  const int E = w.c.embed_dim;
  Mat x(static_cast<Eigen::Index>(tokens.size()), E);
  auto tok = w.mat(w.lay.tok, w.c.vocab_size, E);
  auto pos = w.mat(w.lay.pos, w.c.context_len, E);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = tok.row(tokens[i]) + pos.row(static_cast<Eigen::Index>(first_pos + i));
  }
  return x;
}

// Attention + feed-forward for one layer over a block of new rows whose
// keys/values are appended to `kv`. Fills `acts` when given.
Mat run_layer(const Weights& w, int l, const Mat& x, std::size_t first, KvCache& kv, const BlockHook& hook,
              CaptureSet* capture, LayerActs* acts) {
  const int E = w.c.embed_dim;
  const int F = w.c.ffn_dim;
  const int H = w.c.n_heads;
  const int dh = E / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const LayerLayout& L = w.lay.layers[static_cast<std::size_t>(l)];
  const Eigen::Index T = x.rows();

  LnCache ln1;
  Mat a1 = layer_norm(x, w.row(L.ln1_g, E), w.row(L.ln1_b, E), acts ? &ln1 : nullptr);
  Mat q = a1 * w.mat(L.wq, E, E);
  Mat k = a1 * w.mat(L.wk, E, E);
  Mat v = a1 * w.mat(L.wv, E, E);

  Mat& K = kv.k[static_cast<std::size_t>(l)];
  Mat& Vc = kv.v[static_cast<std::size_t>(l)];
  const Eigen::Index P = K.rows();
  K.conservativeResize(P + T, E);
  Vc.conservativeResize(P + T, E);
  K.bottomRows(T) = k;
  Vc.bottomRows(T) = v;
  const Eigen::Index total = P + T;

  Mat attn_cat(T, E);
  std::vector<Mat> probs;
  for (int h = 0; h < H; ++h) {
    Mat s = q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = P + i + 1; j < total; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
    softmax_rows_inplace(s);
    attn_cat.middleCols(h * dh, dh) = s * Vc.middleCols(h * dh, dh);
    if (acts) probs.push_back(std::move(s));
  }
  Mat attn_out = attn_cat * w.mat(L.wo, E, E);
  apply_hook(hook, l, Site::kAttn, first, attn_out);
  capture_rows(capture, l, Site::kAttn, first, attn_out);

  Mat mid = x + attn_out;
  LnCache ln2;
  Mat a2 = layer_norm(mid, w.row(L.ln2_g, E), w.row(L.ln2_b, E), acts ? &ln2 : nullptr);
  Mat u = (a2 * w.mat(L.w1, E, F)).rowwise() + w.row(L.b1, F);
  Mat r = u.cwiseMax(0.0);
  Mat mlp_out = (r * w.mat(L.w2, F, E)).rowwise() + w.row(L.b2, E);
  apply_hook(hook, l, Site::kMlp, first, mlp_out);
  capture_rows(capture, l, Site::kMlp, first, mlp_out);

  Mat out = mid + mlp_out;
  apply_hook(hook, l, Site::kIntLayer, first, out);
  capture_rows(capture, l, Site::kIntLayer, first, out);

  if (acts) {
    acts->x_in = x;
    acts->ln1 = std::move(ln1);
    acts->a1 = std::move(a1);
    acts->q = std::move(q);
    acts->k = std::move(k);
    acts->v = std::move(v);
    acts->probs = std::move(probs);
    acts->attn_cat = std::move(attn_cat);
    acts->attn_out = std::move(attn_out);
    acts->mid = std::move(mid);
    acts->ln2 = std::move(ln2);
    acts->a2 = std::move(a2);
    acts->u = std::move(u);
    acts->r = std::move(r);
    acts->mlp_out = std::move(mlp_out);
    acts->x_out = out;
  }
  return out;
}

Mat head(const Weights& w, const Mat& x, LnCache* lnf, Mat* af_out) {
  const int E = w.c.embed_dim;
  Mat af = layer_norm(x, w.row(w.lay.lnf_g, E), w.row(w.lay.lnf_b, E), lnf);
  Mat logits = (af * w.mat(w.lay.wout, E, w.c.vocab_size)).rowwise() + w.row(w.lay.bout, w.c.vocab_size);
  if (af_out) *af_out = std::move(af);
  return logits;
}

void check_tokens(const ModelConfig& c, std::span<const int> tokens, std::size_t prefix) {
  if (prefix + tokens.size() > static_cast<std::size_t>(c.context_len)) {
    throw ValueError("context overflow: " + std::to_string(prefix + tokens.size()) + " tokens > context_len " +
                     std::to_string(c.context_len));
  }
  for (int t : tokens)
    if (t < 0 || t >= c.vocab_size) throw ValueError("token id " + std::to_string(t) + " outside vocabulary");
}

KvCache empty_cache(const ModelConfig& c) {
  KvCache kv;
  kv.k.assign(static_cast<std::size_t>(c.n_layers), Mat(0, c.embed_dim));
  kv.v.assign(static_cast<std::size_t>(c.n_layers), Mat(0, c.embed_dim));
  return kv;
}

// Full teacher-forced forward from position 0, keeping activations.
Mat forward_full(const Weights& w, std::span<const int> tokens, BlockActs* acts) {
  KvCache kv = empty_cache(w.c);
  Mat x = embed(w, tokens, 0);
  if (acts) acts->layers.resize(static_cast<std::size_t>(w.c.n_layers));
  for (int l = 0; l < w.c.n_layers; ++l) {
    x = run_layer(w, l, x, 0, kv, {}, nullptr, acts ? &acts->layers[static_cast<std::size_t>(l)] : nullptr);
  }
  return head(w, x, acts ? &acts->lnf : nullptr, acts ? &acts->af : nullptr);
}

// Sum of next-token losses over positions [from-1, n-2]; adds the
// parameter gradient of that sum into `grad` when non-null.
double sequence_loss(const Weights& w, std::span<const int> tokens, std::size_t score_from, double* grad) {
  const std::size_t n = tokens.size();
  if (n < 2) throw ValueError("sequence needs at least 2 tokens");
  if (score_from < 1 || score_from >= n) throw ValueError("score_from out of range");
  BlockActs acts;
  Mat logits = forward_full(w, tokens, grad ? &acts : nullptr);
  const int V = w.c.vocab_size;
  const int E = w.c.embed_dim;
  const int F = w.c.ffn_dim;
  const int H = w.c.n_heads;
  const int dh = E / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(n);

  double loss = 0.0;
  Mat dlogits = Mat::Zero(T, V);
  for (std::size_t i = score_from - 1; i + 1 < n; ++i) {
    const auto ri = static_cast<Eigen::Index>(i);
    const double mx = logits.row(ri).maxCoeff();
    Row e = (logits.row(ri).array() - mx).exp();
    const double z = e.sum();
    const int target = tokens[i + 1];
    loss += -(logits(ri, target) - mx - std::log(z));
    if (grad) {
      dlogits.row(ri) = e / z;
      dlogits(ri, target) -= 1.0;
    }
  }
  if (!grad) return loss;

  Grads g{grad};
  const Layout& lay = w.lay;
  g.mat(lay.wout, E, V) += acts.af.transpose() * dlogits;
  g.row(lay.bout, V) += dlogits.colwise().sum();
  Mat daf = dlogits * w.mat(lay.wout, E, V).transpose();
  Mat dx = layer_norm_backward(daf, acts.lnf, w.row(lay.lnf_g, E), g.row(lay.lnf_g, E), g.row(lay.lnf_b, E));

  for (int l = w.c.n_layers - 1; l >= 0; --l) {
    const LayerLayout& L = lay.layers[static_cast<std::size_t>(l)];
    const LayerActs& a = acts.layers[static_cast<std::size_t>(l)];
    // x_out = mid + mlp_out
    const Mat& dmlp = dx;
    g.mat(L.w2, F, E) += a.r.transpose() * dmlp;
    g.row(L.b2, E) += dmlp.colwise().sum();
    Mat dr = dmlp * w.mat(L.w2, F, E).transpose();
    Mat du = (a.u.array() > 0).select(dr, 0.0);
    g.mat(L.w1, E, F) += a.a2.transpose() * du;
    g.row(L.b1, F) += du.colwise().sum();
    Mat da2 = du * w.mat(L.w1, E, F).transpose();
    Mat dmid = dx + layer_norm_backward(da2, a.ln2, w.row(L.ln2_g, E), g.row(L.ln2_g, E), g.row(L.ln2_b, E));
    // mid = x_in + attn_out
    g.mat(L.wo, E, E) += a.attn_cat.transpose() * dmid;
    Mat dcat = dmid * w.mat(L.wo, E, E).transpose();
    Mat dq(T, E), dk(T, E), dv(T, E);
    for (int h = 0; h < H; ++h) {
      const Mat& p = a.probs[static_cast<std::size_t>(h)];
      Mat dout = dcat.middleCols(h * dh, dh);
      Mat dp = dout * a.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dout;
      Col rowdot = (dp.array() * p.array()).rowwise().sum();
      Mat ds = p.array() * (dp.array().colwise() - rowdot.array());
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * a.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * a.q.middleCols(h * dh, dh);
    }
    g.mat(L.wq, E, E) += a.a1.transpose() * dq;
    g.mat(L.wk, E, E) += a.a1.transpose() * dk;
    g.mat(L.wv, E, E) += a.a1.transpose() * dv;
    Mat da1 = dq * w.mat(L.wq, E, E).transpose() + dk * w.mat(L.wk, E, E).transpose() +
              dv * w.mat(L.wv, E, E).transpose();
    dx = dmid + layer_norm_backward(da1, a.ln1, w.row(L.ln1_g, E), g.row(L.ln1_g, E), g.row(L.ln1_b, E));
  }
  auto dtok = g.mat(lay.tok, V, E);
  auto dpos = g.mat(lay.pos, w.c.context_len, E);
  for (Eigen::Index i = 0; i < T; ++i) {
    dtok.row(tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
  return loss;
}

}  // namespace

// ---------------------------------------------------------------- Vocab

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\n") != std::string::npos) {
      throw ValueError("Vocab: token " + std::to_string(i) + " is empty or contains whitespace");
    }
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ValueError("Vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocab::text(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValueError("Vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw ValueError("Vocab: unknown token '" + std::string(token) + "'");
  return it->second;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) ids.push_back(id(word));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += text(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------- Model

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ValueError("ModelConfig: vocab_size must be >= 2");
  if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0) {
    throw ValueError("ModelConfig: embed_dim must be a positive multiple of n_heads");
  }
  if (n_layers < 2) throw ValueError("ModelConfig: n_layers must be >= 2");
  if (ffn_dim < 1) throw ValueError("ModelConfig: ffn_dim must be >= 1");
  if (context_len < 2) throw ValueError("ModelConfig: context_len must be >= 2");
}

std::size_t parameter_count(const ModelConfig& cfg) { return make_layout(cfg).total; }

ToyModel::ToyModel(ModelConfig cfg, Vocab vocab, std::uint64_t seed) : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (vocab_.size() != static_cast<std::size_t>(cfg_.vocab_size)) {
    throw ValueError("ToyModel: vocab has " + std::to_string(vocab_.size()) + " tokens, config says " +
                     std::to_string(cfg_.vocab_size));
  }
  eos_id_ = vocab_.contains("<eos>") ? vocab_.id("<eos>") : -1;
  const Layout lay = make_layout(cfg_);
  params_.assign(lay.total, 0.0);
  RngStream rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = sd * rng.normal();
  };
  const auto E = static_cast<std::size_t>(cfg_.embed_dim);
  const auto F = static_cast<std::size_t>(cfg_.ffn_dim);
  const auto V = static_cast<std::size_t>(cfg_.vocab_size);
  const double sd = 0.02;
  const double sd_out = 0.02 / std::sqrt(2.0 * cfg_.n_layers);
  fill(lay.tok, V * E, sd);
  fill(lay.pos, static_cast<std::size_t>(cfg_.context_len) * E, sd);
  for (const auto& L : lay.layers) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(L.ln1_g), E, 1.0);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(L.ln2_g), E, 1.0);
    fill(L.wq, E * E, sd);
    fill(L.wk, E * E, sd);
    fill(L.wv, E * E, sd);
    fill(L.wo, E * E, sd_out);
    fill(L.w1, E * F, sd);
    fill(L.w2, F * E, sd_out);
  }
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lay.lnf_g), E, 1.0);
  fill(lay.wout, E * V, sd);
}

// ---------------------------------------------------------------- DecodeSession

struct DecodeSession::Impl {
  const ToyModel* model;
  Weights w;
  KvCache kv;
  std::vector<int> tokens;

  explicit Impl(const ToyModel& m) : model(&m), w(m.config(), m.parameters()), kv(empty_cache(m.config())) {}
};

DecodeSession::DecodeSession(const ToyModel& model) : impl_(std::make_unique<Impl>(model)) {}
DecodeSession::~DecodeSession() = default;
DecodeSession::DecodeSession(DecodeSession&&) noexcept = default;
DecodeSession& DecodeSession::operator=(DecodeSession&&) noexcept = default;

std::vector<double> DecodeSession::append(std::span<const int> tokens, const BlockHook& hook, CaptureSet* capture) {
  if (tokens.empty()) throw ValueError("DecodeSession::append: no tokens");
  Impl& s = *impl_;
  const std::size_t first = s.tokens.size();
  check_tokens(s.w.c, tokens, first);
  Mat x = embed(s.w, tokens, first);
  for (int l = 0; l < s.w.c.n_layers; ++l) x = run_layer(s.w, l, x, first, s.kv, hook, capture, nullptr);
  Mat last = x.bottomRows(1);
  Mat logits = head(s.w, last, nullptr, nullptr);
  s.tokens.insert(s.tokens.end(), tokens.begin(), tokens.end());
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

std::size_t DecodeSession::length() const { return impl_->tokens.size(); }
const std::vector<int>& DecodeSession::tokens() const { return impl_->tokens; }

// ---------------------------------------------------------------- free functions

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValueError("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

ForwardResult forward_with_capture(const ToyModel& m, std::span<const int> tokens, const BlockHook& hook) {
  DecodeSession session(m);
  ForwardResult r;
  r.logits = session.append(tokens, hook, &r.capture);
  r.distribution = softmax(r.logits);
  return r;
}

std::vector<double> resume_from_layer(const ToyModel& m, std::span<const int> tokens, const CaptureSet& overridden,
                                      const SiteKey& key, std::size_t position) {
  const Weights w(m.config(), m.parameters());
  check_tokens(w.c, tokens, 0);
  if (key.layer < 0 || key.layer >= w.c.n_layers) throw ValueError("resume_from_layer: layer out of range");
  if (position >= tokens.size()) throw ValueError("resume_from_layer: position out of range");
  const std::size_t n = position + 1;
  const int E = w.c.embed_dim;
  const int F = w.c.ffn_dim;
  auto rows = [&](int layer, Site site) {
    Mat out(static_cast<Eigen::Index>(n), E);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = overridden.find(CaptureKey{layer, site, i});
      if (it == overridden.end()) {
        throw ValueError("resume_from_layer: missing state for " + to_string(SiteKey{layer, site}) + " at position " +
                         std::to_string(i));
      }
      if (it->second.dim() != static_cast<std::size_t>(E)) throw DimensionError("resume_from_layer: state dim");
      for (int j = 0; j < E; ++j) out(static_cast<Eigen::Index>(i), j) = it->second[static_cast<std::size_t>(j)];
    }
    return out;
  };
  const int l = key.layer;
  const LayerLayout& L = w.lay.layers[static_cast<std::size_t>(l)];
  auto mlp_block = [&](const Mat& mid) {
    Mat a2 = layer_norm(mid, w.row(L.ln2_g, E), w.row(L.ln2_b, E), nullptr);
    Mat u = (a2 * w.mat(L.w1, E, F)).rowwise() + w.row(L.b1, F);
    return Mat((u.cwiseMax(0.0) * w.mat(L.w2, F, E)).rowwise() + w.row(L.b2, E));
  };
  auto layer_input = [&]() {
    return l == 0 ? embed(w, tokens.first(n), 0) : rows(l - 1, Site::kIntLayer);
  };

  Mat x;
  switch (key.site) {
    case Site::kIntLayer:
      x = rows(l, Site::kIntLayer);
      break;
    case Site::kMlp: {
      Mat mid = layer_input() + rows(l, Site::kAttn);
      x = mid + rows(l, Site::kMlp);
      break;
    }
    case Site::kAttn: {
      Mat mid = layer_input() + rows(l, Site::kAttn);
      x = mid + mlp_block(mid);
      break;
    }
  }
  KvCache kv = empty_cache(w.c);
  for (int k = l + 1; k < w.c.n_layers; ++k) x = run_layer(w, k, x, 0, kv, {}, nullptr, nullptr);
  Mat logits = head(w, x.bottomRows(1), nullptr, nullptr);
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

double perplexity(const ToyModel& m, std::span<const int> tokens, std::size_t score_from) {
  if (tokens.size() < 2) throw ValueError("perplexity: need at least 2 tokens");
  const Weights w(m.config(), m.parameters());
  check_tokens(w.c, tokens, 0);
  const double loss = sequence_loss(w, tokens, score_from, nullptr);
  return std::exp(loss / static_cast<double>(tokens.size() - score_from));
}

double loss_and_gradient(const ToyModel& m, std::span<const int> tokens, std::vector<double>* grad) {
  const Weights w(m.config(), m.parameters());
  check_tokens(w.c, tokens, 0);
  if (grad) grad->assign(m.parameters().size(), 0.0);
  const double loss = sequence_loss(w, tokens, 1, grad ? grad->data() : nullptr);
  const double n = static_cast<double>(tokens.size() - 1);
  if (grad)
    for (double& g : *grad) g /= n;
  return loss / n;
}

void LmTrainConfig::validate() const {
  if (epochs < 1) throw ValueError("LmTrainConfig: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ValueError("LmTrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw ValueError("LmTrainConfig: batch_size must be >= 1");
}

ToyModel train_toy_lm(const EpochCorpus& corpus, const Vocab& vocab, const ModelConfig& cfg,
                      const LmTrainConfig& train, LmTrainReport* report) {
  train.validate();
  ToyModel model(cfg, vocab, train.seed);
  std::vector<double>& params = model.parameters();
  const std::size_t np = params.size();
  std::vector<double> grad(np), m1(np, 0.0), m2(np, 0.0);
  RngStream rng(train.seed ^ 0x7a11ULL);
  const double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-9;

  auto validate_corpus = [&](const std::vector<std::vector<int>>& seqs) {
    if (seqs.empty()) throw ValueError("train_toy_lm: empty corpus");
    for (const auto& s : seqs) {
      if (s.size() < 2) throw ValueError("train_toy_lm: sequence shorter than 2 tokens");
      check_tokens(cfg, s, 0);
    }
  };
  auto mean_loss = [&](const std::vector<std::vector<int>>& seqs) {
    const Weights w(cfg, params);
    double loss = 0.0;
    std::size_t count = 0;
    for (const auto& s : seqs) {
      loss += sequence_loss(w, s, 1, nullptr);
      count += s.size() - 1;
    }
    return loss / static_cast<double>(count);
  };

  std::vector<std::vector<int>> seqs = corpus(0);
  validate_corpus(seqs);
  const std::size_t steps_per_epoch = (seqs.size() + static_cast<std::size_t>(train.batch_size) - 1) /
                                      static_cast<std::size_t>(train.batch_size);
  const double total_steps = static_cast<double>(steps_per_epoch) * train.epochs;
  const double warmup = std::max(1.0, 0.05 * total_steps);
  if (report) {
    report->epoch_loss.clear();
    report->initial_perplexity = std::exp(mean_loss(seqs));
  }

  std::size_t step = 0;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    if (epoch > 0) {
      seqs = corpus(epoch);
      validate_corpus(seqs);
    }
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      std::size_t batch_tokens = 0;
      {
        const Weights w(cfg, params);
        for (std::size_t k = start; k < stop; ++k) {
          const auto& s = seqs[order[k]];
          epoch_loss += sequence_loss(w, s, 1, grad.data());
          batch_tokens += s.size() - 1;
        }
      }
      epoch_tokens += batch_tokens;
      const double inv = 1.0 / static_cast<double>(batch_tokens);
      double norm2 = 0.0;
      for (double& g : grad) {
        g *= inv;
        norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw NumericError("train_toy_lm: non-finite gradient at epoch " + std::to_string(epoch));
      const double clip = (train.grad_clip > 0 && norm > train.grad_clip) ? train.grad_clip / norm : 1.0;

      ++step;
      const double s = static_cast<double>(step);
      double lr = train.learning_rate;
      if (s < warmup) {
        lr *= s / warmup;
      } else {
        const double progress = std::min(1.0, (s - warmup) / std::max(1.0, total_steps - warmup));
        lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress));
      }
      const double bc1 = 1.0 - std::pow(beta1, s);
      const double bc2 = 1.0 - std::pow(beta2, s);
      for (std::size_t i = 0; i < np; ++i) {
        const double g = grad[i] * clip;
        m1[i] = beta1 * m1[i] + (1 - beta1) * g;
        m2[i] = beta2 * m2[i] + (1 - beta2) * g * g;
        params[i] -= lr * ((m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + adam_eps) + train.weight_decay * params[i]);
      }
    }
    if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_tokens));
  }
  // Round to f32 so a saved checkpoint reloads to the identical model.
  for (double& p : params) p = static_cast<double>(static_cast<float>(p));
  if (report) report->final_perplexity = std::exp(mean_loss(corpus(0)));
  return model;
}

ToyModel train_toy_lm(const std::vector<std::vector<int>>& corpus, const Vocab& vocab, const ModelConfig& cfg,
                      const LmTrainConfig& train, LmTrainReport* report) {
  return train_toy_lm([&corpus](int) { return corpus; }, vocab, cfg, train, report);
}

// ---------------------------------------------------------------- checkpoint

std::vector<std::uint8_t> encode_model(const ToyModel& m) {
  const ModelConfig& c = m.config();
  ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  for (int v : {c.vocab_size, c.embed_dim, c.n_layers, c.n_heads, c.ffn_dim, c.context_len}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(m.vocab().size()));
  for (const auto& t : m.vocab().tokens()) w.str(t);
  w.u64(m.parameters().size());
  for (double p : m.parameters()) w.f32(static_cast<float>(p));
  return w.take();
}

ToyModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kModelMagic.size() || r.raw(kModelMagic.size()) != kModelMagic) {
    throw FormatError("bad magic", "not a TOYLM1 checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) throw FormatError("version mismatch", "TOYLM1 version " + std::to_string(version));
  ModelConfig c;
  c.vocab_size = static_cast<int>(r.u32());
  c.embed_dim = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.ffn_dim = static_cast<int>(r.u32());
  c.context_len = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const ValueError& e) {
    throw FormatError("bad header", e.what());
  }
  const std::uint32_t nv = r.u32();
  if (nv != static_cast<std::uint32_t>(c.vocab_size)) throw FormatError("bad header", "vocab count mismatch");
  std::vector<std::string> toks;
  for (std::uint32_t i = 0; i < nv; ++i) toks.push_back(r.str());
  const std::uint64_t np = r.u64();
  if (np != parameter_count(c)) throw FormatError("bad header", "parameter count mismatch");
  if (np * 4 > r.remaining()) throw FormatError("truncated", "TOYLM1 parameter block is short");
  if (np * 4 < r.remaining()) throw FormatError("bad header", "trailing bytes after parameters");
  Vocab vocab;
  try {
    vocab = Vocab(std::move(toks));
  } catch (const ValueError& e) {
    throw FormatError("bad header", e.what());
  }
  ToyModel m(c, std::move(vocab), 0);
  for (double& p : m.parameters()) p = r.f32();
  return m;
}

void save_model(const ToyModel& m, const std::filesystem::path& path) { write_file_bytes(path, encode_model(m)); }

ToyModel load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

}  // namespace hsteer
