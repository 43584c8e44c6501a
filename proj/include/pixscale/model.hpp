#pragma once

// Decoder-only next-pixel transformer: pre-RMSNorm blocks with causal
// multi-head self-attention (1-D rotary positions) and a GEGLU feed-forward,
// untied output head. Forward and exact backward are written by hand over
// Eigen matrices and templated on the scalar type (float for training,
// double for gradient checks).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pixscale/binio.hpp"
#include "pixscale/common.hpp"
#include "pixscale/imaging.hpp"

namespace pixscale {

struct ModelSpec {
  int layers = 1;
  int hidden = 64;
  int mlp = 128;
  int heads = 8;
  int vocab = 256;
  int max_seq = 64;

  int head_dim() const { return hidden / heads; }

  void validate() const {
    require(layers >= 1, "model needs at least one layer");
    require(hidden >= 1 && mlp >= 1 && heads >= 1, "model dimensions must be positive");
    require(hidden % heads == 0, "hidden size must be divisible by head count");
    require(head_dim() % 2 == 0, "head dimension must be even for rotary embedding");
    require(vocab >= 2, "vocabulary must have at least two tokens");
    require(max_seq >= 1, "max sequence length must be positive");
  }

  std::string to_string() const {
    return "L" + std::to_string(layers) + "-d" + std::to_string(hidden) + "-m" + std::to_string(mlp) + "-h" +
           std::to_string(heads) + "-K" + std::to_string(vocab) + "-T" + std::to_string(max_seq);
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"layers", s.layers}, {"hidden", s.hidden}, {"mlp", s.mlp},
                     {"heads", s.heads},   {"vocab", s.vocab},   {"max_seq", s.max_seq}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.layers = j.at("layers").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.mlp = j.at("mlp").get<int>();
  s.heads = j.value("heads", 8);
  s.vocab = j.value("vocab", 256);
  s.max_seq = j.value("max_seq", 1024);
}

struct ParamCount {
  std::int64_t body = 0;   // transformer trunk; the N of all scaling math
  std::int64_t total = 0;  // body + token embedding + output head
};

/// body = L(4d^2 + 3dm + 2d) + d, total = body + 2Kd. The begin-of-sequence
/// embedding row (d values) is stored alongside the token table but is not
/// part of either count.
constexpr ParamCount param_count(const ModelSpec& s) {
  const std::int64_t L = s.layers, d = s.hidden, m = s.mlp, K = s.vocab;
  const std::int64_t body = L * (4 * d * d + 3 * d * m + 2 * d) + d;
  return {body, body + 2 * K * d};
}

/// The four base architectures (S-28M, S-77M, B-227M, B-449M).
inline std::array<ModelSpec, 4> base_configs(int vocab = 256, int max_seq = 1024) {
  return {{{16, 384, 1024, 8, vocab, max_seq},
           {24, 512, 1408, 8, vocab, max_seq},
           {32, 768, 2048, 8, vocab, max_seq},
           {36, 1024, 2688, 8, vocab, max_seq}}};
}

inline constexpr std::array<const char*, 4> kBaseConfigNames = {"S-28M", "S-77M", "B-227M", "B-449M"};

/// Six depth/width perturbations of a base model, in Var-0..Var-5 order:
/// 2L; 2d,2m; 2L,2d,2m; L/2; d/2,m/2; L/2,d/2,m/2. Head count is kept.
inline std::array<ModelSpec, 6> isoflop_variants(const ModelSpec& base) {
  require(base.layers % 2 == 0, "isoflop variants need an even layer count, got " + std::to_string(base.layers));
  require(base.hidden % 2 == 0 && base.mlp % 2 == 0, "isoflop variants need even hidden and mlp sizes");
  auto scaled = [&](int lf, int df, bool halve_l, bool halve_w) {
    ModelSpec s = base;
    s.layers = halve_l ? base.layers / 2 : base.layers * lf;
    s.hidden = halve_w ? base.hidden / 2 : base.hidden * df;
    s.mlp = halve_w ? base.mlp / 2 : base.mlp * df;
    return s;
  };
  return {{scaled(2, 1, false, false), scaled(1, 2, false, false), scaled(2, 2, false, false),
           scaled(1, 1, true, false), scaled(1, 1, false, true), scaled(1, 1, true, true)}};
}

// ---------------------------------------------------------------------------
// Parameters

struct TensorInfo {
  std::string name;
  std::size_t offset;
  int rows;
  int cols;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Tensors in checkpoint declaration order: embedding ((K+1) x d, last row is
/// the begin-of-sequence input), then per layer wq, wk, wv, wo (d x d),
/// w_gate, w_up (d x m), w_down (m x d), attn_norm, mlp_norm (d), then
/// final_norm (d) and head (d x K). Matrices multiply row vectors from the
/// right: y = x W.
inline std::vector<TensorInfo> param_layout(const ModelSpec& s) {
  std::vector<TensorInfo> out;
  std::size_t off = 0;
  auto add = [&](std::string name, int r, int c) {
    out.push_back({std::move(name), off, r, c});
    off += static_cast<std::size_t>(r) * c;
  };
  const int d = s.hidden, m = s.mlp;
  add("embedding", s.vocab + 1, d);
  for (int l = 0; l < s.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "wq", d, d);
    add(p + "wk", d, d);
    add(p + "wv", d, d);
    add(p + "wo", d, d);
    add(p + "w_gate", d, m);
    add(p + "w_up", d, m);
    add(p + "w_down", m, d);
    add(p + "attn_norm", 1, d);
    add(p + "mlp_norm", 1, d);
  }
  add("final_norm", 1, d);
  add("head", d, s.vocab);
  return out;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
class Params {
 public:
  using Mat = RowMat<T>;
  using MatMap = Eigen::Map<Mat>;
  using CMatMap = Eigen::Map<const Mat>;
  using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using VecMap = Eigen::Map<RowVec>;
  using CVecMap = Eigen::Map<const RowVec>;

  Params() = default;
  explicit Params(const ModelSpec& spec) : spec_(spec), layout_(param_layout(spec)) {
    values_.assign(layout_.back().offset + layout_.back().size(), T(0));
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<TensorInfo>& layout() const { return layout_; }
  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  MatMap tensor(std::size_t i) { return {values_.data() + layout_[i].offset, layout_[i].rows, layout_[i].cols}; }
  CMatMap tensor(std::size_t i) const { return {values_.data() + layout_[i].offset, layout_[i].rows, layout_[i].cols}; }

  MatMap embedding() { return tensor(0); }
  CMatMap embedding() const { return tensor(0); }
  MatMap wq(int l) { return tensor(layer_base(l) + 0); }
  CMatMap wq(int l) const { return tensor(layer_base(l) + 0); }
  MatMap wk(int l) { return tensor(layer_base(l) + 1); }
  CMatMap wk(int l) const { return tensor(layer_base(l) + 1); }
  MatMap wv(int l) { return tensor(layer_base(l) + 2); }
  CMatMap wv(int l) const { return tensor(layer_base(l) + 2); }
  MatMap wo(int l) { return tensor(layer_base(l) + 3); }
  CMatMap wo(int l) const { return tensor(layer_base(l) + 3); }
  MatMap w_gate(int l) { return tensor(layer_base(l) + 4); }
  CMatMap w_gate(int l) const { return tensor(layer_base(l) + 4); }
  MatMap w_up(int l) { return tensor(layer_base(l) + 5); }
  CMatMap w_up(int l) const { return tensor(layer_base(l) + 5); }
  MatMap w_down(int l) { return tensor(layer_base(l) + 6); }
  CMatMap w_down(int l) const { return tensor(layer_base(l) + 6); }
  VecMap attn_norm(int l) { return vec(layer_base(l) + 7); }
  CVecMap attn_norm(int l) const { return vec(layer_base(l) + 7); }
  VecMap mlp_norm(int l) { return vec(layer_base(l) + 8); }
  CVecMap mlp_norm(int l) const { return vec(layer_base(l) + 8); }
  VecMap final_norm() { return vec(layout_.size() - 2); }
  CVecMap final_norm() const { return vec(layout_.size() - 2); }
  MatMap head() { return tensor(layout_.size() - 1); }
  CMatMap head() const { return tensor(layout_.size() - 1); }

  void set_zero() { std::fill(values_.begin(), values_.end(), T(0)); }

  template <class U>
  Params<U> cast() const {
    Params<U> out(spec_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<U>(values_[i]);
    return out;
  }

  bool all_finite() const {
    for (T v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t layer_base(int l) const { return 1 + static_cast<std::size_t>(l) * 9; }
  VecMap vec(std::size_t i) { return {values_.data() + layout_[i].offset, layout_[i].cols}; }
  CVecMap vec(std::size_t i) const { return {values_.data() + layout_[i].offset, layout_[i].cols}; }

  ModelSpec spec_;
  std::vector<TensorInfo> layout_;
  std::vector<T> values_;
};

struct InitConfig {
  double stddev = 0.02;
  bool zero_head = false;
};

/// Gaussian init; residual output projections (wo, w_down) are scaled by
/// 1/sqrt(2L); norm gains start at one.
template <class T>
Params<T> init_params(const ModelSpec& spec, std::uint64_t seed, const InitConfig& cfg = {}) {
  spec.validate();
  Params<T> p(spec);
  Rng rng(seed);
  const double resid = cfg.stddev / std::sqrt(2.0 * spec.layers);
  for (std::size_t i = 0; i < p.layout().size(); ++i) {
    const auto& info = p.layout()[i];
    auto t = p.tensor(i);
    const bool is_norm = info.name.ends_with("norm");
    const bool is_resid = info.name.ends_with(".wo") || info.name.ends_with(".w_down");
    const bool is_head = info.name == "head";
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double v;
        if (is_norm) v = 1.0;
        else if (is_head && cfg.zero_head) v = 0.0;
        else v = rng.normal() * (is_resid ? resid : cfg.stddev);
        t(r, c) = static_cast<T>(v);
      }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Kernels

inline constexpr double kRmsEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;

namespace kernels {

template <class T>
void rms_forward(const RowMat<T>& x, const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& gain,
                 ColVec<T>& inv, RowMat<T>& out) {
  const auto n = x.cols();
  inv.resize(x.rows());
  out.resize(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T ms = x.row(r).squaredNorm() / static_cast<T>(n);
    inv(r) = T(1) / std::sqrt(ms + static_cast<T>(kRmsEps));
    out.row(r) = (x.row(r) * inv(r)).cwiseProduct(gain);
  }
}

/// Returns d(loss)/dx and accumulates d(loss)/d(gain).
template <class T, class GainGrad>
RowMat<T> rms_backward(const RowMat<T>& x, const ColVec<T>& inv,
                       const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& gain, const RowMat<T>& dy,
                       GainGrad&& dgain) {
  const auto n = static_cast<T>(x.cols());
  RowMat<T> dx(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    dgain += dy.row(r).cwiseProduct(x.row(r)) * inv(r);
    const auto dxhat = dy.row(r).cwiseProduct(gain);
    const T proj = dxhat.dot(x.row(r)) / n;
    dx.row(r) = inv(r) * (dxhat - x.row(r) * (inv(r) * inv(r) * proj));
  }
  return dx;
}

template <class T>
struct RopeTable {
  int length = 0;
  int half = 0;
  RowMat<T> cos, sin;  // length x half

  void ensure(int len, int head_dim) {
    if (len == length && head_dim / 2 == half) return;
    length = len;
    half = head_dim / 2;
    cos.resize(len, half);
    sin.resize(len, half);
    for (int p = 0; p < len; ++p)
      for (int i = 0; i < half; ++i) {
        const double theta = p * std::pow(kRopeBase, -2.0 * i / head_dim);
        cos(p, i) = static_cast<T>(std::cos(theta));
        sin(p, i) = static_cast<T>(std::sin(theta));
      }
  }
};

/// Rotates adjacent pairs (2i, 2i+1) of every head by the position angle;
/// `direction` = -1 applies the inverse (transpose) rotation.
template <class T>
void apply_rope(RowMat<T>& x, int batch, int length, int heads, const RopeTable<T>& rope, int direction) {
  const int hd = static_cast<int>(x.cols()) / heads;
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < length; ++t) {
      T* row = x.row(static_cast<Eigen::Index>(b) * length + t).data();
      for (int h = 0; h < heads; ++h) {
        T* v = row + h * hd;
        for (int i = 0; i < hd / 2; ++i) {
          const T c = rope.cos(t, i);
          const T s = direction > 0 ? rope.sin(t, i) : -rope.sin(t, i);
          const T x0 = v[2 * i], x1 = v[2 * i + 1];
          v[2 * i] = x0 * c - x1 * s;
          v[2 * i + 1] = x0 * s + x1 * c;
        }
      }
    }
}

/// tanh-approximated GELU.
template <class T>
RowMat<T> gelu(const RowMat<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = static_cast<T>(0.044715);
  RowMat<T> inner = c * (a.array() + k * a.array().cube()).matrix();
  return (T(0.5) * a.array() * (T(1) + inner.array().tanh())).matrix();
}

template <class T>
RowMat<T> gelu_grad(const RowMat<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = static_cast<T>(0.044715);
  const auto x = a.array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = (c * (x + k * x.cube())).tanh();
  return (T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t.square()) * c * (T(1) + T(3) * k * x.square())).matrix();
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct LayerCache {
  RowMat<T> x_in, h1, q, k, v, attn, x_mid, h2, a, b, u;
  ColVec<T> inv1, inv2;
  std::vector<RowMat<T>> probs;  // batch * heads of (length x length)
};

/// Per-batch activations retained for the backward pass.
template <class T>
struct Activations {
  int batch = 0;
  int length = 0;
  std::vector<int> inputs;  // model inputs: BOS then tokens shifted right
  std::vector<LayerCache<T>> layers;
  RowMat<T> x_final, h_final, logits;
  ColVec<T> inv_final;
  kernels::RopeTable<T> rope;
};

/// Runs the model over `batch` sequences of `length` target tokens laid out
/// contiguously. Row t of each sequence's logits predicts token t from the
/// begin-of-sequence input and tokens [0, t). When `run_layers` < L the pass
/// stops after that many blocks and `x_final` holds the residual stream.
template <class T>
void forward_batch(const Params<T>& p, std::span<const int> tokens, int batch, int length, Activations<T>& act,
                   int run_layers = -1, bool compute_logits = true) {
  const ModelSpec& s = p.spec();
  require(length >= 1 && length <= s.max_seq,
          "sequence length " + std::to_string(length) + " exceeds max_seq " + std::to_string(s.max_seq));
  require(tokens.size() == static_cast<std::size_t>(batch) * length, "token buffer does not match batch shape");
  const int L = run_layers < 0 ? s.layers : run_layers;
  const int d = s.hidden, H = s.heads, hd = s.head_dim();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * length;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  act.batch = batch;
  act.length = length;
  act.inputs.resize(static_cast<std::size_t>(rows));
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < length; ++t) {
      const int in = t == 0 ? s.vocab : tokens[static_cast<std::size_t>(b) * length + t - 1];
      require(in >= 0 && in <= s.vocab, "token out of vocabulary range");
      act.inputs[static_cast<std::size_t>(b) * length + t] = in;
    }
  act.rope.ensure(length, hd);
  act.layers.resize(static_cast<std::size_t>(s.layers));

  RowMat<T> x(rows, d);
  const auto emb = p.embedding();
  for (Eigen::Index r = 0; r < rows; ++r) x.row(r) = emb.row(act.inputs[static_cast<std::size_t>(r)]);

  for (int l = 0; l < L; ++l) {
    LayerCache<T>& c = act.layers[static_cast<std::size_t>(l)];
    c.x_in = x;
    kernels::rms_forward<T>(c.x_in, p.attn_norm(l), c.inv1, c.h1);
    c.q.noalias() = c.h1 * p.wq(l);
    c.k.noalias() = c.h1 * p.wk(l);
    c.v.noalias() = c.h1 * p.wv(l);
    kernels::apply_rope(c.q, batch, length, H, act.rope, +1);
    kernels::apply_rope(c.k, batch, length, H, act.rope, +1);
    c.attn.resize(rows, d);
    c.probs.resize(static_cast<std::size_t>(batch) * H);
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
        const auto Q = c.q.block(r0, h * hd, length, hd);
        const auto K = c.k.block(r0, h * hd, length, hd);
        const auto V = c.v.block(r0, h * hd, length, hd);
        RowMat<T>& P = c.probs[static_cast<std::size_t>(b) * H + h];
        P.noalias() = (Q * K.transpose()) * scale;
        for (int i = 0; i < length; ++i) {
          auto row = P.row(i);
          const T mx = row.head(i + 1).maxCoeff();
          row.head(i + 1) = (row.head(i + 1).array() - mx).exp().matrix();
          row.head(i + 1) /= row.head(i + 1).sum();
          row.tail(length - i - 1).setZero();
        }
        c.attn.block(r0, h * hd, length, hd).noalias() = P * V;
      }
    x.noalias() = c.attn * p.wo(l);
    x += c.x_in;
    c.x_mid = x;
    kernels::rms_forward<T>(c.x_mid, p.mlp_norm(l), c.inv2, c.h2);
    c.a.noalias() = c.h2 * p.w_gate(l);
    c.b.noalias() = c.h2 * p.w_up(l);
    c.u = kernels::gelu(c.a).cwiseProduct(c.b);
    x.noalias() = c.u * p.w_down(l);
    x += c.x_mid;
  }
  act.x_final = std::move(x);
  if (L == s.layers) {
    kernels::rms_forward<T>(act.x_final, p.final_norm(), act.inv_final, act.h_final);
    if (compute_logits) act.logits.noalias() = act.h_final * p.head();
  }
}

/// Mean next-token negative log-likelihood (nats) of `tokens` under `logits`
/// (one row per token). Accumulates in double.
template <class Derived>
double nll_from_logits(const Eigen::MatrixBase<Derived>& logits, std::span<const int> tokens) {
  require(static_cast<std::size_t>(logits.rows()) >= tokens.size(), "fewer logit rows than tokens");
  require(!tokens.empty(), "empty sequence");
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = logits.row(static_cast<Eigen::Index>(t));
    const double mx = static_cast<double>(row.maxCoeff());
    require(std::isfinite(mx), "non-finite logits at position " + std::to_string(t));
    double sum = 0.0;
    for (Eigen::Index k = 0; k < row.size(); ++k) sum += std::exp(static_cast<double>(row(k)) - mx);
    require(std::isfinite(sum), "non-finite logits at position " + std::to_string(t));
    total += std::log(sum) + mx - static_cast<double>(row(tokens[t]));
  }
  return total / static_cast<double>(tokens.size());
}

/// Backward pass after `forward_batch` (full depth, logits computed).
/// Accumulates loss_scale * d(mean NLL)/d(theta) into `grad` and returns the
/// mean NLL.
template <class T>
double backward_batch(const Params<T>& p, std::span<const int> tokens, Activations<T>& act, Params<T>& grad,
                      T loss_scale = T(1)) {
  const ModelSpec& s = p.spec();
  const int batch = act.batch, length = act.length;
  const int H = s.heads, hd = s.head_dim();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * length;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  require(act.logits.rows() == rows, "backward requires a full forward pass");

  // Softmax cross-entropy.
  RowMat<T> dz = act.logits;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = dz.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    const T sum = row.sum();
    const int target = tokens[static_cast<std::size_t>(r)];
    loss += std::log(static_cast<double>(sum)) + static_cast<double>(mx) - static_cast<double>(act.logits(r, target));
    row /= sum;
    row(target) -= T(1);
  }
  loss /= static_cast<double>(rows);
  if (!std::isfinite(loss)) return loss;
  dz *= loss_scale / static_cast<T>(rows);

  grad.head().noalias() += act.h_final.transpose() * dz;
  RowMat<T> dh = dz * p.head().transpose();
  RowMat<T> dx = kernels::rms_backward<T>(act.x_final, act.inv_final, p.final_norm(), dh, grad.final_norm());

  for (int l = s.layers - 1; l >= 0; --l) {
    LayerCache<T>& c = act.layers[static_cast<std::size_t>(l)];
    // Feed-forward block.
    grad.w_down(l).noalias() += c.u.transpose() * dx;
    const RowMat<T> du = dx * p.w_down(l).transpose();
    const RowMat<T> ga = kernels::gelu(c.a);
    const RowMat<T> da = du.cwiseProduct(c.b).cwiseProduct(kernels::gelu_grad(c.a));
    const RowMat<T> db = du.cwiseProduct(ga);
    grad.w_gate(l).noalias() += c.h2.transpose() * da;
    grad.w_up(l).noalias() += c.h2.transpose() * db;
    dh.noalias() = da * p.w_gate(l).transpose();
    dh.noalias() += db * p.w_up(l).transpose();
    dx += kernels::rms_backward<T>(c.x_mid, c.inv2, p.mlp_norm(l), dh, grad.mlp_norm(l));

    // Attention block.
    grad.wo(l).noalias() += c.attn.transpose() * dx;
    const RowMat<T> dattn = dx * p.wo(l).transpose();
    RowMat<T> dq(rows, s.hidden), dk(rows, s.hidden), dv(rows, s.hidden);
    RowMat<T> dP, dS;
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
        const auto Q = c.q.block(r0, h * hd, length, hd);
        const auto K = c.k.block(r0, h * hd, length, hd);
        const auto V = c.v.block(r0, h * hd, length, hd);
        const auto dO = dattn.block(r0, h * hd, length, hd);
        const RowMat<T>& P = c.probs[static_cast<std::size_t>(b) * H + h];
        dv.block(r0, h * hd, length, hd).noalias() = P.transpose() * dO;
        dP.noalias() = dO * V.transpose();
        dS = P.cwiseProduct(dP);
        const ColVec<T> rowdot = dS.rowwise().sum();
        dS = P.cwiseProduct(dP - rowdot.replicate(1, length)) * scale;
        dq.block(r0, h * hd, length, hd).noalias() = dS * K;
        dk.block(r0, h * hd, length, hd).noalias() = dS.transpose() * Q;
      }
    kernels::apply_rope(dq, batch, length, H, act.rope, -1);
    kernels::apply_rope(dk, batch, length, H, act.rope, -1);
    grad.wq(l).noalias() += c.h1.transpose() * dq;
    grad.wk(l).noalias() += c.h1.transpose() * dk;
    grad.wv(l).noalias() += c.h1.transpose() * dv;
    dh.noalias() = dq * p.wq(l).transpose();
    dh.noalias() += dk * p.wk(l).transpose();
    dh.noalias() += dv * p.wv(l).transpose();
    dx += kernels::rms_backward<T>(c.x_in, c.inv1, p.attn_norm(l), dh, grad.attn_norm(l));
  }

  auto demb = grad.embedding();
  for (Eigen::Index r = 0; r < rows; ++r) demb.row(act.inputs[static_cast<std::size_t>(r)]) += dx.row(r);
  return loss;
}

// Single-sequence conveniences.

template <class T>
RowMat<T> forward(const Params<T>& p, const PixelSequence& seq) {
  require(seq.vocab == p.spec().vocab, "sequence vocabulary does not match model");
  Activations<T> act;
  forward_batch(p, seq.tokens, 1, static_cast<int>(seq.tokens.size()), act);
  return act.logits;
}

template <class Derived>
double nll_loss(const Eigen::MatrixBase<Derived>& logits, const PixelSequence& seq) {
  return nll_from_logits(logits, seq.tokens);
}

template <class T>
Params<T> backward(const Params<T>& p, const PixelSequence& seq, T loss_scale = T(1)) {
  require(seq.vocab == p.spec().vocab, "sequence vocabulary does not match model");
  Activations<T> act;
  forward_batch(p, seq.tokens, 1, static_cast<int>(seq.tokens.size()), act);
  Params<T> grad(p.spec());
  backward_batch(p, seq.tokens, act, grad, loss_scale);
  return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelSpec spec;
  std::uint64_t step = 0;
  Params<float> params;
};

/// PXCK: magic, six u32 spec fields (layers, hidden, mlp, heads, vocab,
/// max_seq), u64 step, then float32 weights in layout order.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out;
  binio::put_magic(out, "PXCK");
  for (int v : {ck.spec.layers, ck.spec.hidden, ck.spec.mlp, ck.spec.heads, ck.spec.vocab, ck.spec.max_seq})
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  binio::put<std::uint64_t>(out, ck.step);
  const auto& v = ck.params.values();
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view data) {
  binio::Reader in(data, "checkpoint");
  in.expect_magic("PXCK");
  Checkpoint ck;
  ck.spec.layers = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.hidden = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.mlp = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.heads = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.vocab = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.max_seq = static_cast<int>(in.get<std::uint32_t>());
  ck.spec.validate();
  ck.step = in.get<std::uint64_t>();
  ck.params = Params<float>(ck.spec);
  auto& v = ck.params.values();
  const char* p = in.take(v.size() * sizeof(float));
  std::memcpy(v.data(), p, v.size() * sizeof(float));
  require(in.remaining() == 0, "checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  binio::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(binio::read_file(path));
}

}  // namespace pixscale
