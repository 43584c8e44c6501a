#pragma once

// Bottom-half image completion and the Fréchet distance between Gaussian fits
// of embedded image sets. Embeddings come from a pluggable extractor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pixscale/common.hpp"
#include "pixscale/imaging.hpp"
#include "pixscale/model.hpp"
#include "pixscale/probe.hpp"

namespace pixscale {

enum class SamplingMode { ancestral, argmax };

struct CompletionTask {
  ImageGrid reference;
  int visible_rows = -1;  // -1: top half
  int samples = 1;
  double temperature = 1.0;
  SamplingMode mode = SamplingMode::ancestral;
  std::uint64_t seed = 0;
};

namespace detail {

inline int model_resolution(const ModelSpec& spec) {
  const auto s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.max_seq))));
  require(s * s == spec.max_seq, "model max_seq " + std::to_string(spec.max_seq) + " is not a square resolution");
  return s;
}

/// Draws from softmax(logits / temperature); argmax mode picks the lowest
/// index among the maxima.
template <class Row>
int sample_token(const Row& logits, double temperature, SamplingMode mode, Rng& rng) {
  const Eigen::Index K = logits.size();
  if (mode == SamplingMode::argmax) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < K; ++k)
      if (logits(k) > logits(best)) best = k;
    return static_cast<int>(best);
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits(k)));
  std::vector<double> w(static_cast<std::size_t>(K));
  double z = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) z += (w[static_cast<std::size_t>(k)] = std::exp((logits(k) - mx) / temperature));
  double u = rng.uniform() * z;
  for (Eigen::Index k = 0; k < K; ++k) {
    u -= w[static_cast<std::size_t>(k)];
    if (u < 0.0) return static_cast<int>(k);
  }
  // Rounding left u >= 0: take the last token with non-zero weight.
  for (Eigen::Index k = K - 1; k >= 0; --k)
    if (w[static_cast<std::size_t>(k)] > 0.0) return static_cast<int>(k);
  return 0;
}

}  // namespace detail

struct CompletionConfig {
  int samples_per_ref = 1;
  int visible_rows = -1;  // -1: top half
  double temperature = 1.0;
  SamplingMode mode = SamplingMode::ancestral;
  std::uint64_t seed = 0;
  int workers = 1;
  int chunk = 64;  // sequences advanced together
};

/// Completes every reference `samples_per_ref` times; output is reference-
/// major. Each (reference, sample) pair has its own seeded stream and
/// sequences are processed in fixed chunks, so results are independent of
/// the worker count. References must already be at the model resolution.
inline std::vector<ImageGrid> complete_many(const Params<float>& params, const PaletteCodec& codec,
                                            const std::vector<ImageGrid>& references, const CompletionConfig& cfg) {
  const ModelSpec& spec = params.spec();
  require(spec.vocab == codec.vocab, "checkpoint vocabulary does not match codec");
  require(cfg.samples_per_ref >= 1, "samples per reference must be at least 1");
  require(cfg.mode == SamplingMode::argmax || cfg.temperature > 0, "temperature must be positive");
  const int s = detail::model_resolution(spec);
  const int length = s * s;
  const int visible_rows = cfg.visible_rows < 0 ? s / 2 : cfg.visible_rows;
  require(visible_rows >= 0 && visible_rows <= s, "visible rows out of range");
  const int visible = visible_rows * s;

  const std::size_t total = references.size() * static_cast<std::size_t>(cfg.samples_per_ref);
  std::vector<std::vector<int>> seqs(total);
  for (std::size_t r = 0; r < references.size(); ++r) {
    require(references[r].size == s, "resolution mismatch: reference " + std::to_string(r) + " is " +
                                         std::to_string(references[r].size) + "px, checkpoint expects " +
                                         std::to_string(s) + "px");
    const PixelSequence enc = encode(references[r], codec);
    for (int k = 0; k < cfg.samples_per_ref; ++k) seqs[r * cfg.samples_per_ref + k] = enc.tokens;
  }

  const std::size_t chunks = (total + cfg.chunk - 1) / cfg.chunk;
  parallel_for(chunks, cfg.workers, [&](std::size_t c) {
    const std::size_t begin = c * cfg.chunk;
    const std::size_t end = std::min(total, begin + cfg.chunk);
    const int n = static_cast<int>(end - begin);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(n));
    for (std::size_t i = begin; i < end; ++i)
      rngs.emplace_back(derive_seed(cfg.seed, i / cfg.samples_per_ref, i % cfg.samples_per_ref));
    Activations<float> act;
    std::vector<int> prefix;
    for (int t = visible; t < length; ++t) {
      const int plen = t + 1;
      prefix.assign(static_cast<std::size_t>(n) * plen, 0);
      for (int i = 0; i < n; ++i)
        std::copy(seqs[begin + i].begin(), seqs[begin + i].begin() + t, prefix.begin() + static_cast<std::ptrdiff_t>(i) * plen);
      forward_batch(params, prefix, n, plen, act);
      for (int i = 0; i < n; ++i)
        seqs[begin + i][static_cast<std::size_t>(t)] = detail::sample_token(
            act.logits.row(static_cast<Eigen::Index>(i) * plen + t), cfg.temperature, cfg.mode, rngs[static_cast<std::size_t>(i)]);
    }
  });

  std::vector<ImageGrid> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    PixelSequence seq{std::move(seqs[i]), codec.vocab, s};
    ImageGrid img = decode(seq, codec);
    img.label = references[i / cfg.samples_per_ref].label;
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<ImageGrid> complete(const Params<float>& params, const PaletteCodec& codec,
                                       const CompletionTask& task) {
  require(task.samples >= 1, "samples per reference must be at least 1");
  require(task.reference.size % 2 == 0 || task.visible_rows >= 0, "completion needs an even resolution");
  CompletionConfig cfg;
  cfg.samples_per_ref = task.samples;
  cfg.visible_rows = task.visible_rows;
  cfg.temperature = task.temperature;
  cfg.mode = task.mode;
  cfg.seed = task.seed;
  return complete_many(params, codec, {task.reference}, cfg);
}

// ---------------------------------------------------------------------------
// Embeddings

class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  /// One row per image.
  virtual Eigen::MatrixXd embed_batch(const std::vector<ImageGrid>& images) const = 0;
};

/// Wraps extractor failures with the index of the offending image.
inline Eigen::MatrixXd embed(const std::vector<ImageGrid>& images, const Extractor& extractor) {
  require(extractor.dim() > 0, "extractor " + extractor.name() + " declares a non-positive dimension");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), extractor.dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      out.row(static_cast<Eigen::Index>(i)) = extractor.embed_batch({images[i]}).row(0);
    } catch (const std::exception& e) {
      throw Error("extractor " + extractor.name() + " failed on image " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

/// Mean pixel value; the one-dimensional reference extractor.
class MeanPixelExtractor final : public Extractor {
 public:
  int dim() const override { return 1; }
  std::string name() const override { return "mean_pixel"; }
  Eigen::MatrixXd embed_batch(const std::vector<ImageGrid>& images) const override {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), 1);
    for (std::size_t i = 0; i < images.size(); ++i) {
      double sum = 0;
      for (auto v : images[i].pixels) sum += v;
      out(static_cast<Eigen::Index>(i), 0) = sum / static_cast<double>(images[i].pixels.size());
    }
    return out;
  }
};

/// Principal components of flattened pixels, fit on a reference set.
class PcaExtractor final : public Extractor {
 public:
  PcaExtractor(const std::vector<ImageGrid>& fit_set, int max_dims = 64) {
    require(fit_set.size() >= 2, "PCA needs at least two images");
    resolution_ = fit_set.front().size;
    channels_ = fit_set.front().channels;
    const Eigen::MatrixXd X = flatten(fit_set);
    mean_ = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mean_;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    require(eig.info() == Eigen::Success, "PCA eigendecomposition failed to converge");
    const int k = std::min<int>(max_dims, static_cast<int>(X.cols()));
    // Eigen orders eigenvalues ascending; keep the top k.
    components_ = eig.eigenvectors().rightCols(k).rowwise().reverse();
    eigenvalues_ = eig.eigenvalues().tail(k).reverse();
  }

  int dim() const override { return static_cast<int>(components_.cols()); }
  std::string name() const override { return "pca"; }

  Eigen::MatrixXd embed_batch(const std::vector<ImageGrid>& images) const override {
    return (flatten(images).rowwise() - mean_) * components_;
  }

  /// Projection back to pixel space (for reconstruction checks).
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& codes) const {
    return (codes * components_.transpose()).rowwise() + mean_;
  }

  Eigen::MatrixXd flatten(const std::vector<ImageGrid>& images) const {
    const Eigen::Index n = static_cast<Eigen::Index>(images.size());
    const Eigen::Index width = static_cast<Eigen::Index>(resolution_) * resolution_ * channels_;
    Eigen::MatrixXd X(n, width);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& img = images[static_cast<std::size_t>(i)];
      require(img.size == resolution_ && img.channels == channels_,
              "image shape does not match the PCA fit set (" + std::to_string(resolution_) + "px)");
      for (Eigen::Index j = 0; j < width; ++j) X(i, j) = img.pixels[static_cast<std::size_t>(j)];
    }
    return X;
  }

  const Eigen::MatrixXd& components() const { return components_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }

 private:
  int resolution_ = 0;
  int channels_ = 1;
  Eigen::RowVectorXd mean_;
  Eigen::MatrixXd components_;
  Eigen::VectorXd eigenvalues_;
};

/// Mean-pooled transformer features at a fixed layer of a checkpoint.
class ProbeFeatureExtractor final : public Extractor {
 public:
  ProbeFeatureExtractor(Params<float> params, PaletteCodec codec, int layer)
      : params_(std::move(params)), codec_(std::move(codec)), layer_(layer) {
    require(layer_ >= 0 && layer_ <= params_.spec().layers, "probe extractor layer out of range");
  }
  int dim() const override { return params_.spec().hidden; }
  std::string name() const override { return "probe_layer" + std::to_string(layer_); }
  Eigen::MatrixXd embed_batch(const std::vector<ImageGrid>& images) const override {
    std::vector<PixelSequence> seqs;
    seqs.reserve(images.size());
    for (const auto& img : images) seqs.push_back(encode(img, codec_));
    return extract_features(params_, seqs, layer_).values.cast<double>();
  }

 private:
  Params<float> params_;
  PaletteCodec codec_;
  int layer_;
};

// ---------------------------------------------------------------------------
// Fréchet distance

struct FDStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;

  Eigen::Index dim() const { return mean.size(); }
};

/// Sample mean and unbiased covariance of embedding rows.
inline FDStats fd_stats(const Eigen::MatrixXd& rows) {
  require(rows.rows() >= 2, "Fréchet statistics need at least two samples");
  FDStats s;
  s.count = static_cast<std::size_t>(rows.rows());
  s.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

inline constexpr double kEigenClamp = -1e-8;

namespace detail {

inline Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) < 0.0) {
      require(out(i) >= kEigenClamp * std::max(1.0, ev.cwiseAbs().maxCoeff()),
              std::string(what) + " is not positive semi-definite (eigenvalue " + std::to_string(out(i)) + ")");
      out(i) = 0.0;
    }
  }
  return out;
}

}  // namespace detail

/// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A^1/2 S_B S_A^1/2)^1/2).
inline double frechet_distance(const FDStats& a, const FDStats& b) {
  require(a.dim() == b.dim(), "Fréchet dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.cov);
  require(ea.info() == Eigen::Success, "eigendecomposition did not converge");
  const Eigen::VectorXd la = detail::clamped_eigenvalues(ea.eigenvalues(), "covariance A");
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_a * b.cov * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  require(ei.info() == Eigen::Success, "eigendecomposition did not converge");
  const Eigen::VectorXd li = detail::clamped_eigenvalues(ei.eigenvalues(), "covariance product");
  const double fd = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * li.cwiseSqrt().sum();
  return std::max(0.0, fd);
}

struct CompletionFdResult {
  double distance = 0;
  std::size_t n_reference = 0;
  std::size_t n_generated = 0;
  std::vector<ImageGrid> generated;
};

inline void to_json(nlohmann::json& j, const CompletionFdResult& r) {
  j = nlohmann::json{{"frechet_distance", r.distance}, {"n_reference", r.n_reference}, {"n_generated", r.n_generated}};
}

/// Completes the first `n_ref` references and compares generated and
/// reference embeddings. References may sit at a higher native resolution:
/// they are downsampled to condition the model and the generated images are
/// resampled back to the native resolution before embedding.
inline CompletionFdResult completion_fd(const Params<float>& params, const PaletteCodec& codec,
                                        const std::vector<ImageGrid>& references, std::size_t n_ref,
                                        const Extractor& extractor, const CompletionConfig& cfg) {
  require(n_ref >= 1 && n_ref <= references.size(), "n_ref must be in [1, " + std::to_string(references.size()) + "]");
  const int s = detail::model_resolution(params.spec());
  std::vector<ImageGrid> refs(references.begin(), references.begin() + static_cast<std::ptrdiff_t>(n_ref));
  std::vector<ImageGrid> inputs;
  inputs.reserve(n_ref);
  for (const auto& r : refs) inputs.push_back(r.size == s ? r : resample(r, s));
  CompletionFdResult out;
  out.generated = complete_many(params, codec, inputs, cfg);
  std::vector<ImageGrid> gen_native;
  gen_native.reserve(out.generated.size());
  for (std::size_t i = 0; i < out.generated.size(); ++i) {
    const int native = refs[i / static_cast<std::size_t>(cfg.samples_per_ref)].size;
    gen_native.push_back(out.generated[i].size == native ? out.generated[i] : resample(out.generated[i], native));
  }
  out.n_reference = refs.size();
  out.n_generated = gen_native.size();
  out.distance = frechet_distance(fd_stats(embed(refs, extractor)), fd_stats(embed(gen_native, extractor)));
  return out;
}

}  // namespace pixscale
