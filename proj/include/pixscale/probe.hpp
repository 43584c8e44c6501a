#pragma once

// Linear probing of frozen features: mean-pooled residual-stream activations,
// a multinomial logistic head trained by plain SGD, and a (layer x lr) grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pixscale/binio.hpp"
#include "pixscale/common.hpp"
#include "pixscale/model.hpp"

namespace pixscale {

struct FeatureMatrix {
  int layer = 0;
  std::string pooling = "mean";
  RowMat<float> values;  // one row per image, d columns

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Mean-pooled activations at `layer`: 0 is the embedding output, l in
/// [1, L) the residual stream after block l, and L the final normalized
/// output. Pooling covers all s^2 input positions (begin-of-sequence plus
/// the first s^2 - 1 pixels). Images are processed in fixed chunks, so the
/// result does not depend on `workers`.
inline FeatureMatrix extract_features(const Params<float>& params, const std::vector<PixelSequence>& sequences,
                                      int layer, int workers = 1, int chunk = 64) {
  const ModelSpec& spec = params.spec();
  require(layer >= 0 && layer <= spec.layers,
          "layer " + std::to_string(layer) + " out of range [0, " + std::to_string(spec.layers) + "]");
  require(!sequences.empty(), "no images to extract features from");
  require(chunk >= 1, "chunk size must be positive");
  const int length = static_cast<int>(sequences.front().tokens.size());
  FeatureMatrix out;
  out.layer = layer;
  out.values.resize(static_cast<Eigen::Index>(sequences.size()), spec.hidden);
  const std::size_t chunks = (sequences.size() + chunk - 1) / chunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(sequences.size(), begin + chunk);
    const int n = static_cast<int>(end - begin);
    std::vector<int> tokens;
    tokens.reserve(static_cast<std::size_t>(n) * length);
    for (std::size_t i = begin; i < end; ++i) {
      require(static_cast<int>(sequences[i].tokens.size()) == length, "feature extraction needs equal-length sequences");
      tokens.insert(tokens.end(), sequences[i].tokens.begin(), sequences[i].tokens.end());
    }
    Activations<float> act;
    forward_batch(params, tokens, n, length, act, layer, false);
    const RowMat<float>& h = layer == spec.layers ? act.h_final : act.x_final;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd mean =
          h.middleRows(static_cast<Eigen::Index>(i) * length, length).cast<double>().colwise().mean().transpose();
      out.values.row(static_cast<Eigen::Index>(begin) + i) = mean.cast<float>().transpose();
    }
  });
  return out;
}

struct ProbeConfig {
  int epochs = 600;
  int batch = 4096;
  double val_fraction = 0.1;
  int num_classes = 0;      // 0: infer as max label + 1
  bool standardize = true;  // z-score with train-split statistics
};

struct ProbeOutcome {
  double accuracy = 0;  // top-1 on the held-out validation split
  std::size_t train_size = 0;
  std::size_t val_size = 0;
};

/// Multinomial logistic regression (weights + bias, zero init) trained by
/// minibatch SGD at a constant learning rate. Prediction ties resolve to the
/// lowest class index.
inline ProbeOutcome train_probe_detailed(const FeatureMatrix& features, std::span<const int> labels, double lr,
                                         const ProbeConfig& cfg, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(labels.size() == n, "label count does not match feature rows");
  require(n >= 2, "probe needs at least two examples");
  require(cfg.epochs >= 0 && cfg.batch >= 1, "probe epochs/batch must be valid");
  int classes = cfg.num_classes;
  for (int y : labels) {
    require(y >= 0, "probe labels must be non-negative");
    if (cfg.num_classes == 0) classes = std::max(classes, y + 1);
    else require(y < cfg.num_classes, "probe label out of range");
  }
  {
    std::vector<int> seen(labels.begin(), labels.end());
    std::sort(seen.begin(), seen.end());
    require(std::unique(seen.begin(), seen.end()) - seen.begin() >= 2, "degenerate single-class input");
  }

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  const std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());

  const Eigen::Index dim = features.cols();
  Eigen::MatrixXd X = features.values.cast<double>();
  if (cfg.standardize) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dim);
    for (auto i : train) mean += X.row(static_cast<Eigen::Index>(i));
    mean /= static_cast<double>(train.size());
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(dim);
    for (auto i : train) var += (X.row(static_cast<Eigen::Index>(i)) - mean).array().square().matrix();
    var /= static_cast<double>(train.size());
    const Eigen::RowVectorXd inv_std = (var.array() + 1e-12).rsqrt().matrix();
    X = ((X.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  }

  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(dim, classes);
  Eigen::RowVectorXd bias = Eigen::RowVectorXd::Zero(classes);
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), train.size());
  Eigen::MatrixXd xb, p;
  for (int epoch = 0; epoch < cfg.epochs && lr != 0.0; ++epoch) {
    rng.shuffle(train.begin(), train.end());
    for (std::size_t start = 0; start < train.size(); start += bs) {
      const std::size_t end = std::min(train.size(), start + bs);
      const auto m = static_cast<Eigen::Index>(end - start);
      xb.resize(m, dim);
      for (Eigen::Index r = 0; r < m; ++r) xb.row(r) = X.row(static_cast<Eigen::Index>(train[start + r]));
      p = (xb * W).rowwise() + bias;
      for (Eigen::Index r = 0; r < m; ++r) {
        p.row(r).array() -= p.row(r).maxCoeff();
        p.row(r) = p.row(r).array().exp().matrix();
        p.row(r) /= p.row(r).sum();
        p(r, labels[train[start + r]]) -= 1.0;
      }
      p /= static_cast<double>(m);
      W.noalias() -= lr * (xb.transpose() * p);
      bias -= lr * p.colwise().sum();
    }
  }

  std::size_t correct = 0;
  for (auto i : val) {
    const Eigen::RowVectorXd z = X.row(static_cast<Eigen::Index>(i)) * W + bias;
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < z.size(); ++k)
      if (z(k) > z(best)) best = k;
    if (best == labels[i]) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(val.size()), train.size(), val.size()};
}

inline double train_probe(const FeatureMatrix& features, std::span<const int> labels, double lr,
                          const ProbeConfig& cfg, std::uint64_t seed) {
  return train_probe_detailed(features, labels, lr, cfg, seed).accuracy;
}

struct ProbeResult {
  std::vector<int> layers;
  std::vector<double> lrs;
  std::vector<std::vector<double>> accuracy;  // [layer index][lr index]
  int best_layer = 0;
  double best_lr = 0;
  double best_accuracy = 0;
};

inline void to_json(nlohmann::json& j, const ProbeResult& r) {
  j = nlohmann::json{{"layers", r.layers},       {"lrs", r.lrs},         {"accuracy", r.accuracy},
                     {"best_layer", r.best_layer}, {"best_lr", r.best_lr}, {"best_accuracy", r.best_accuracy}};
}

inline const std::vector<double>& default_probe_lrs() {
  static const std::vector<double> lrs = {3, 1, 0.3, 0.1, 0.03};
  return lrs;
}

/// Seed of grid cell `cell` (row-major over layers x sorted lrs).
inline std::uint64_t probe_cell_seed(std::uint64_t seed, std::size_t cell) { return derive_seed(seed, 0x9b0be, cell); }

/// Full (layer x lr) sweep; best cell by accuracy with ties going to the
/// shallower layer, then the smaller learning rate.
inline ProbeResult best_layer_probe(const Params<float>& params, const std::vector<PixelSequence>& sequences,
                                    std::span<const int> labels, std::vector<double> lr_grid, const ProbeConfig& cfg,
                                    std::uint64_t seed, std::vector<int> layers = {}, int workers = 1) {
  require(!lr_grid.empty(), "learning-rate grid is empty");
  std::sort(lr_grid.begin(), lr_grid.end());
  if (layers.empty())
    for (int l = 0; l <= params.spec().layers; ++l) layers.push_back(l);
  ProbeResult res;
  res.layers = layers;
  res.lrs = lr_grid;
  res.accuracy.assign(layers.size(), std::vector<double>(lr_grid.size(), 0.0));
  std::vector<FeatureMatrix> feats(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li)
    feats[li] = extract_features(params, sequences, layers[li], workers);
  const std::size_t cells = layers.size() * lr_grid.size();
  parallel_for(cells, workers, [&](std::size_t cell) {
    const std::size_t li = cell / lr_grid.size(), ki = cell % lr_grid.size();
    res.accuracy[li][ki] = train_probe(feats[li], labels, lr_grid[ki], cfg, probe_cell_seed(seed, cell));
  });
  res.best_accuracy = -1.0;
  for (std::size_t li = 0; li < layers.size(); ++li)
    for (std::size_t ki = 0; ki < lr_grid.size(); ++ki)
      if (res.accuracy[li][ki] > res.best_accuracy) {
        res.best_accuracy = res.accuracy[li][ki];
        res.best_layer = layers[li];
        res.best_lr = lr_grid[ki];
      }
  return res;
}

// PXFT feature cache: magic, u32 layer, u32 rows, u32 cols, float32 values.
inline std::string serialize_features(const FeatureMatrix& f) {
  std::string out;
  binio::put_magic(out, "PXFT");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.layer));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.rows()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.cols()));
  out.append(reinterpret_cast<const char*>(f.values.data()), static_cast<std::size_t>(f.values.size()) * sizeof(float));
  return out;
}

inline FeatureMatrix deserialize_features(std::string_view data) {
  binio::Reader in(data, "feature cache");
  in.expect_magic("PXFT");
  FeatureMatrix f;
  f.layer = static_cast<int>(in.get<std::uint32_t>());
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  f.values.resize(rows, cols);
  const std::size_t bytes = static_cast<std::size_t>(rows) * cols * sizeof(float);
  std::memcpy(f.values.data(), in.take(bytes), bytes);
  require(in.remaining() == 0, "feature cache: trailing bytes");
  return f;
}

}  // namespace pixscale
