#include <gtest/gtest.h>

#include "pixscale/probe.hpp"
#include "pixscale/training.hpp"

using namespace pixscale;

namespace {

const ModelSpec kSpec{2, 8, 16, 2, 256, 16};

std::vector<PixelSequence> sequences(std::size_t n, std::uint64_t seed) {
  const Dataset ds = synthetic_dataset(n, 4, seed);
  std::vector<PixelSequence> out;
  for (const auto& img : ds.images) out.push_back(encode(img, PaletteCodec::grayscale()));
  return out;
}

FeatureMatrix blobs(int n, int classes, double spread, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  FeatureMatrix f;
  f.values.resize(n, 4);
  labels.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % classes;
    for (int c = 0; c < 4; ++c)
      f.values(i, c) = static_cast<float>((c == labels[i] % 4 ? 3.0 : 0.0) + (labels[i] >= 4 ? 2.0 : 0.0) + spread * rng.normal());
  }
  return f;
}

}  // namespace

TEST(Features, LayerZeroIsMeanInputEmbedding) {
  const auto p = init_params<float>(kSpec, 1);
  const auto seqs = sequences(3, 2);
  const FeatureMatrix f = extract_features(p, seqs, 0);
  ASSERT_EQ(f.rows(), 3);
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd mean = p.embedding().row(kSpec.vocab).cast<double>().transpose();  // begin-of-sequence row
    for (int t = 0; t + 1 < 16; ++t) mean += p.embedding().row(seqs[i].tokens[t]).cast<double>().transpose();
    mean /= 16.0;
    for (int c = 0; c < kSpec.hidden; ++c) EXPECT_NEAR(f.values(i, c), mean(c), 1e-6);
  }
}

TEST(Features, LastLayerIsMeanFinalNorm) {
  const auto p = init_params<float>(kSpec, 4);
  const auto seqs = sequences(2, 5);
  const FeatureMatrix f = extract_features(p, seqs, kSpec.layers);
  Activations<float> act;
  forward_batch(p, seqs[1].tokens, 1, 16, act);
  const Eigen::VectorXd mean = act.h_final.cast<double>().colwise().mean().transpose();
  for (int c = 0; c < kSpec.hidden; ++c) EXPECT_NEAR(f.values(1, c), mean(c), 1e-6);
}

TEST(Features, IndependentOfWorkersAndRangeChecked) {
  const auto p = init_params<float>(kSpec, 4);
  const auto seqs = sequences(70, 5);
  EXPECT_EQ(extract_features(p, seqs, 1, 1).values, extract_features(p, seqs, 1, 4).values);
  EXPECT_THROW(extract_features(p, seqs, 3), Error);
}

TEST(Probe, SeparableBlobsReachFullAccuracy) {
  std::vector<int> y;
  const FeatureMatrix f = blobs(400, 4, 0.1, 1, y);
  ProbeConfig cfg;
  cfg.epochs = 50;
  cfg.batch = 32;
  EXPECT_EQ(train_probe(f, y, 0.1, cfg, 7), 1.0);
}

TEST(Probe, ZeroLearningRatePredictsClassZero) {
  std::vector<int> y;
  const FeatureMatrix f = blobs(200, 4, 0.5, 2, y);
  ProbeConfig cfg;
  const auto out = train_probe_detailed(f, y, 0.0, cfg, 3);
  EXPECT_EQ(out.val_size, 20u);
  // All-zero logits: every prediction is class 0. Recount on the same split.
  std::vector<std::size_t> idx(200);
  for (std::size_t i = 0; i < 200; ++i) idx[i] = i;
  Rng rng(3);
  rng.shuffle(idx.begin(), idx.end());
  int zeros = 0;
  for (int i = 0; i < 20; ++i) zeros += y[idx[i]] == 0;
  EXPECT_DOUBLE_EQ(out.accuracy, zeros / 20.0);
}

TEST(Probe, DegenerateSingleClass) {
  FeatureMatrix f;
  f.values = RowMat<float>::Random(10, 3);
  std::vector<int> y(10, 2);
  try {
    train_probe(f, y, 0.1, ProbeConfig{}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "degenerate single-class input");
  }
}

TEST(Probe, Deterministic) {
  std::vector<int> y;
  const FeatureMatrix f = blobs(300, 8, 1.5, 4, y);
  ProbeConfig cfg;
  cfg.epochs = 20;
  cfg.batch = 16;
  EXPECT_EQ(train_probe(f, y, 0.3, cfg, 5), train_probe(f, y, 0.3, cfg, 5));
}

TEST(BestLayer, GridMaxHoldsExactly) {
  const auto p = init_params<float>(kSpec, 8);
  const Dataset ds = synthetic_dataset(200, 4, 6);
  std::vector<PixelSequence> seqs;
  for (const auto& img : ds.images) seqs.push_back(encode(img, PaletteCodec::grayscale()));
  const auto labels = ds.labels();
  ProbeConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 32;
  const ProbeResult r = best_layer_probe(p, seqs, labels, {0.3, 0.03, 1.0}, cfg, 11, {}, 2);
  EXPECT_EQ(r.lrs, (std::vector<double>{0.03, 0.3, 1.0}));
  EXPECT_EQ(r.layers, (std::vector<int>{0, 1, 2}));
  double mx = -1;
  for (const auto& row : r.accuracy)
    for (double a : row) mx = std::max(mx, a);
  EXPECT_EQ(r.best_accuracy, mx);
  // Reproduce the winning cell independently.
  std::size_t li = 0, ki = 0;
  while (r.layers[li] != r.best_layer) ++li;
  while (r.lrs[ki] != r.best_lr) ++ki;
  const auto feats = extract_features(p, seqs, r.best_layer);
  EXPECT_EQ(train_probe(feats, labels, r.best_lr, cfg, probe_cell_seed(11, li * 3 + ki)), r.best_accuracy);
  // First maximal cell in (layer, lr) order.
  for (std::size_t a = 0; a < r.layers.size(); ++a)
    for (std::size_t b = 0; b < r.lrs.size(); ++b) {
      if (a == li && b == ki) goto done;
      EXPECT_LT(r.accuracy[a][b], r.best_accuracy);
    }
done:
  EXPECT_EQ(best_layer_probe(p, seqs, labels, {0.3, 0.03, 1.0}, cfg, 11, {}, 1).accuracy, r.accuracy);
}

TEST(FeatureCache, RoundTrip) {
  FeatureMatrix f;
  f.layer = 3;
  f.values = RowMat<float>::Random(5, 7);
  const std::string bytes = serialize_features(f);
  const FeatureMatrix back = deserialize_features(bytes);
  EXPECT_EQ(back.layer, 3);
  EXPECT_EQ(back.values, f.values);
  EXPECT_THROW(deserialize_features(std::string_view(bytes).substr(0, bytes.size() - 2)), Error);
}

TEST(Probe, ColumnPermutationSymmetry) {
  std::vector<int> y;
  const FeatureMatrix f = blobs(300, 8, 1.0, 9, y);
  FeatureMatrix g = f;
  const std::vector<int> perm = {2, 0, 3, 1};
  for (int c = 0; c < 4; ++c) g.values.col(c) = f.values.col(perm[c]);
  ProbeConfig cfg;
  cfg.epochs = 30;
  cfg.batch = 16;
  EXPECT_EQ(train_probe(f, y, 0.3, cfg, 4), train_probe(g, y, 0.3, cfg, 4));
}

TEST(BestLayer, SingleCellEqualsDirectProbe) {
  const auto p = init_params<float>(kSpec, 8);
  const Dataset ds = synthetic_dataset(60, 4, 6);
  std::vector<PixelSequence> seqs;
  for (const auto& img : ds.images) seqs.push_back(encode(img, PaletteCodec::grayscale()));
  ProbeConfig cfg;
  cfg.epochs = 5;
  const auto labels = ds.labels();
  const ProbeResult r = best_layer_probe(p, seqs, labels, {0.1}, cfg, 3, {1});
  EXPECT_EQ(r.best_accuracy, train_probe(extract_features(p, seqs, 1), labels, 0.1, cfg, probe_cell_seed(3, 0)));
  EXPECT_THROW(best_layer_probe(p, seqs, labels, {}, cfg, 3), Error);
}
