#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pixscale/model.hpp"

namespace pixscale {
namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Dense reference forward written with plain loops, independent of the
// batched Eigen kernels. Returns logits (length x K).
Mat oracle_forward(const Params<double>& p, const std::vector<int>& tokens, int stop_layer = -1,
                   bool pooled_hidden = false, Mat* hidden_out = nullptr) {
  const ModelSpec& s = p.spec();
  const int T = static_cast<int>(tokens.size());
  const int d = s.hidden, m = s.mlp, H = s.heads, hd = d / H;
  auto matvec = [](const Vec& x, auto W) {
    Vec y(static_cast<std::size_t>(W.cols()), 0.0);
    for (int j = 0; j < W.cols(); ++j)
      for (int i = 0; i < W.rows(); ++i) y[j] += x[i] * W(i, j);
    return y;
  };
  auto rms = [&](const Vec& x, auto g) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / std::sqrt(ms + 1e-6) * g(static_cast<int>(i));
    return y;
  };
  auto rope = [&](Vec v, int pos) {
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < hd / 2; ++i) {
        const double th = pos * std::pow(10000.0, -2.0 * i / hd);
        const double a = v[h * hd + 2 * i], b = v[h * hd + 2 * i + 1];
        v[h * hd + 2 * i] = a * std::cos(th) - b * std::sin(th);
        v[h * hd + 2 * i + 1] = a * std::sin(th) + b * std::cos(th);
      }
    return v;
  };
  Mat x(T, Vec(d));
  for (int t = 0; t < T; ++t) {
    const int in = t == 0 ? s.vocab : tokens[t - 1];
    for (int j = 0; j < d; ++j) x[t][j] = p.embedding()(in, j);
  }
  const int L = stop_layer < 0 ? s.layers : stop_layer;
  for (int l = 0; l < L; ++l) {
    Mat q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
      const Vec h = rms(x[t], [&](int i) { return p.attn_norm(l)(i); });
      q[t] = rope(matvec(h, p.wq(l)), t);
      k[t] = rope(matvec(h, p.wk(l)), t);
      v[t] = matvec(h, p.wv(l));
    }
    Mat next = x;
    for (int t = 0; t < T; ++t) {
      Vec concat(d, 0.0);
      for (int h = 0; h < H; ++h) {
        Vec sc(t + 1);
        double mx = -1e300;
        for (int j = 0; j <= t; ++j) {
          double dot = 0;
          for (int i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[j][h * hd + i];
          sc[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, sc[j]);
        }
        double z = 0;
        for (double& e : sc) z += (e = std::exp(e - mx));
        for (int j = 0; j <= t; ++j)
          for (int i = 0; i < hd; ++i) concat[h * hd + i] += sc[j] / z * v[j][h * hd + i];
      }
      const Vec o = matvec(concat, p.wo(l));
      for (int j = 0; j < d; ++j) next[t][j] += o[j];
    }
    x = next;
    for (int t = 0; t < T; ++t) {
      const Vec h = rms(x[t], [&](int i) { return p.mlp_norm(l)(i); });
      const Vec a = matvec(h, p.w_gate(l)), b = matvec(h, p.w_up(l));
      Vec u(m);
      for (int i = 0; i < m; ++i) {
        const double g = 0.5 * a[i] * (1 + std::tanh(std::sqrt(2 / M_PI) * (a[i] + 0.044715 * a[i] * a[i] * a[i])));
        u[i] = g * b[i];
      }
      const Vec f = matvec(u, p.w_down(l));
      for (int j = 0; j < d; ++j) x[t][j] += f[j];
    }
  }
  if (L < s.layers || pooled_hidden) {
    if (hidden_out) *hidden_out = x;
    return {};
  }
  Mat logits(T);
  for (int t = 0; t < T; ++t) {
    const Vec h = rms(x[t], [&](int i) { return p.final_norm()(i); });
    if (hidden_out) hidden_out->push_back(h);
    logits[t] = matvec(h, p.head());
  }
  return logits;
}

PixelSequence make_seq(std::vector<int> tokens, int vocab) {
  PixelSequence s;
  s.tokens = std::move(tokens);
  s.vocab = vocab;
  s.resolution = 0;
  return s;
}

TEST(ParamCount, BaseConfigNamesWithinTolerance) {
  const auto cfgs = base_configs();
  const double names[] = {28e6, 77e6, 227e6, 449e6};
  for (int i = 0; i < 4; ++i) {
    const double body = static_cast<double>(param_count(cfgs[i]).body);
    EXPECT_NEAR(body / names[i], 1.0, 0.02) << kBaseConfigNames[i];
  }
  // 16*(4*384^2 + 3*384*1024 + 768) + 384
  EXPECT_EQ(param_count(cfgs[0]).body, 28324224);
  EXPECT_NEAR(static_cast<double>(param_count(cfgs[3]).body), 448.3e6, 0.1e6);
}

TEST(ParamCount, EmptyTrunk) {
  ModelSpec s{0, 16, 32, 2, 10, 4};
  const auto c = param_count(s);
  EXPECT_EQ(c.body, 16);
  EXPECT_EQ(c.total, 16 + 2 * 10 * 16);
}

TEST(BaseConfigs, TableRows) {
  const auto c = base_configs();
  EXPECT_EQ(c[0].layers, 16);
  EXPECT_EQ(c[0].hidden, 384);
  EXPECT_EQ(c[0].mlp, 1024);
  EXPECT_EQ(c[3].layers, 36);
  EXPECT_EQ(c[3].hidden, 1024);
  EXPECT_EQ(c[3].mlp, 2688);
  for (const auto& s : c) EXPECT_EQ(s.heads, 8);
}

TEST(IsoflopVariants, Perturbations) {
  const auto v = isoflop_variants(base_configs()[0]);
  EXPECT_EQ(v[0].layers, 32);
  EXPECT_EQ(v[0].hidden, 384);
  EXPECT_EQ(v[0].mlp, 1024);
  EXPECT_EQ(v[1].hidden, 768);
  EXPECT_EQ(v[1].mlp, 2048);
  EXPECT_EQ(v[2].layers, 32);
  EXPECT_EQ(v[2].hidden, 768);
  EXPECT_EQ(v[3].layers, 8);
  EXPECT_EQ(v[4].hidden, 192);
  EXPECT_EQ(v[4].mlp, 512);
  EXPECT_EQ(v[5].layers, 8);
  EXPECT_EQ(v[5].hidden, 192);
  EXPECT_EQ(v[5].mlp, 512);
  for (const auto& s : v) EXPECT_EQ(s.heads, 8);
  ModelSpec odd = base_configs()[0];
  odd.layers = 3;
  EXPECT_THROW(isoflop_variants(odd), Error);
}

TEST(Forward, MatchesDenseOracleTinyModel) {
  const ModelSpec s{1, 4, 6, 1, 3, 2};
  const auto p = init_params<double>(s, 7, {.stddev = 0.5});
  const auto logits = forward(p, make_seq({0, 1}, 3));
  const auto ref = oracle_forward(p, {0, 1});
  for (int t = 0; t < 2; ++t)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(logits(t, k), ref[t][k], 1e-6 * std::max(1.0, std::abs(ref[t][k])));
}

TEST(Forward, MatchesDenseOracleMultiHead) {
  const ModelSpec s{2, 8, 12, 2, 5, 9};
  const auto p = init_params<double>(s, 11, {.stddev = 0.4});
  const std::vector<int> toks{4, 0, 3, 3, 1, 2, 0, 4, 1};
  const auto logits = forward(p, make_seq(toks, 5));
  const auto ref = oracle_forward(p, toks);
  for (int t = 0; t < 9; ++t)
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(logits(t, k), ref[t][k], 1e-9 * std::max(1.0, std::abs(ref[t][k])));
}

TEST(Forward, CausalityBitExact) {
  const ModelSpec s{2, 16, 24, 2, 7, 12};
  const auto p = init_params<float>(s, 3, {.stddev = 0.3});
  std::vector<int> toks{1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5};
  const auto base = forward(p, make_seq(toks, 7));
  for (int t = 0; t < 12; ++t) {
    auto pert = toks;
    pert[t] = (pert[t] + 3) % 7;
    const auto out = forward(p, make_seq(pert, 7));
    // Row r sees tokens [0, r), so rows <= t must be unchanged bit for bit.
    for (int r = 0; r <= t; ++r)
      for (int k = 0; k < 7; ++k) ASSERT_EQ(out(r, k), base(r, k)) << "t=" << t << " r=" << r;
  }
}

TEST(Forward, ZeroHeadGivesZeroLogits) {
  const ModelSpec s{2, 8, 8, 2, 6, 5};
  const auto p = init_params<float>(s, 1, {.zero_head = true});
  const auto logits = forward(p, make_seq({1, 5, 2, 0, 3}, 6));
  EXPECT_EQ(logits.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Forward, DeterministicAcrossCalls) {
  const ModelSpec s{2, 16, 32, 4, 9, 10};
  const auto p = init_params<float>(s, 5);
  const auto seq = make_seq({1, 2, 3, 4, 5, 6, 7, 8, 0, 1}, 9);
  EXPECT_TRUE(forward(p, seq) == forward(p, seq));
}

TEST(Forward, RejectsLengthAndVocabMismatch) {
  const ModelSpec s{1, 8, 8, 2, 4, 3};
  const auto p = init_params<float>(s, 1);
  EXPECT_THROW(forward(p, make_seq({0, 1, 2, 3}, 4)), Error);
  EXPECT_THROW(forward(p, make_seq({0, 1}, 5)), Error);
}

TEST(NllLoss, UniformLogits) {
  RowMat<double> logits = RowMat<double>::Zero(4, 256);
  EXPECT_NEAR(nll_loss(logits, make_seq({0, 17, 255, 3}, 256)), std::log(256.0), 1e-12);
}

TEST(NllLoss, LargeMarginLimit) {
  RowMat<double> logits = RowMat<double>::Zero(3, 4);
  const std::vector<int> toks{2, 0, 3};
  for (int t = 0; t < 3; ++t) logits(t, toks[t]) = 30.0;
  const double loss = nll_loss(logits, make_seq(toks, 4));
  EXPECT_LT(loss, 1e-12);
  EXPECT_GE(loss, 0.0);
}

TEST(NllLoss, MatchesDirectSummation) {
  Rng rng(42);
  RowMat<double> logits(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) logits(i, k) = rng.normal() * 2.0;
  const std::vector<int> toks{2, 0, 1, 1};
  double direct = 0;
  for (int t = 0; t < 4; ++t) {
    const double z = std::exp(logits(t, 0)) + std::exp(logits(t, 1)) + std::exp(logits(t, 2));
    direct += -std::log(std::exp(logits(t, toks[t])) / z);
  }
  EXPECT_NEAR(nll_loss(logits, make_seq(toks, 3)), direct / 4.0, 1e-12);
}

TEST(NllLoss, RejectsNonFinite) {
  RowMat<double> logits = RowMat<double>::Zero(2, 3);
  logits(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(nll_loss(logits, make_seq({0, 1}, 3)), Error);
}

double loss_of(const Params<double>& p, const std::vector<int>& toks) {
  return nll_loss(forward(p, make_seq(toks, p.spec().vocab)), make_seq(toks, p.spec().vocab));
}

TEST(Backward, FiniteDifferenceEveryParameter) {
  const ModelSpec s{2, 8, 12, 2, 5, 9};
  auto p = init_params<double>(s, 19, {.stddev = 0.3});
  const std::vector<int> toks{3, 1, 4, 1, 0, 2, 4, 2, 3};
  const auto grad = backward(p, make_seq(toks, 5));
  const double eps = 1e-4;
  for (std::size_t ti = 0; ti < p.layout().size(); ++ti) {
    const auto& info = p.layout()[ti];
    double num2 = 0, diff2 = 0;
    for (std::size_t j = 0; j < info.size(); ++j) {
      double& w = p.values()[info.offset + j];
      const double orig = w;
      w = orig + eps;
      const double up = loss_of(p, toks);
      w = orig - eps;
      const double down = loss_of(p, toks);
      w = orig;
      const double fd = (up - down) / (2 * eps);
      const double an = grad.values()[info.offset + j];
      num2 += fd * fd;
      diff2 += (fd - an) * (fd - an);
    }
    EXPECT_LE(std::sqrt(diff2), 1e-4 * std::sqrt(num2)) << info.name;
  }
}

TEST(Backward, NeverInputEmbeddingRowHasZeroGradient) {
  const ModelSpec s{1, 8, 8, 2, 6, 4};
  const auto p = init_params<double>(s, 2);
  // Token 5 is never an input (the last token is only a target).
  const auto grad = backward(p, make_seq({1, 2, 1, 5}, 6));
  for (int j = 0; j < 8; ++j) EXPECT_EQ(grad.embedding()(5, j), 0.0);
  EXPECT_GT(grad.embedding().row(1).norm(), 0.0);
}

TEST(Backward, LossScaleIsLinear) {
  const ModelSpec s{1, 8, 8, 2, 6, 4};
  const auto p = init_params<double>(s, 2);
  const auto seq = make_seq({1, 2, 3, 4}, 6);
  const auto g1 = backward(p, seq, 1.0);
  const auto g2 = backward(p, seq, 2.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g2.values()[i], 2.0 * g1.values()[i]);
}

TEST(Kernels, RopePreservesHeadNorms) {
  kernels::RopeTable<double> rope;
  rope.ensure(16, 8);
  RowMat<double> x(16, 16);
  Rng rng(1);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  RowMat<double> y = x;
  kernels::apply_rope(y, 1, 16, 2, rope, +1);
  for (int t = 0; t < 16; ++t)
    for (int h = 0; h < 2; ++h) {
      const double a = x.block(t, h * 8, 1, 8).norm(), b = y.block(t, h * 8, 1, 8).norm();
      EXPECT_NEAR(b / a, 1.0, 1e-6);
    }
  kernels::apply_rope(y, 1, 16, 2, rope, -1);
  EXPECT_LT((y - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernels, RmsNormUnitRms) {
  Rng rng(9);
  RowMat<double> x(32, 24);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * (1 + i % 5);
  Eigen::Matrix<double, 1, Eigen::Dynamic> gain = Eigen::Matrix<double, 1, Eigen::Dynamic>::Ones(24);
  ColVec<double> inv;
  RowMat<double> y;
  kernels::rms_forward<double>(x, gain, inv, y);
  for (int r = 0; r < 32; ++r) EXPECT_NEAR(std::sqrt(y.row(r).squaredNorm() / 24), 1.0, 1e-6);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  const ModelSpec s{2, 16, 24, 4, 11, 16};
  Checkpoint ck{s, 1234, init_params<float>(s, 8)};
  const std::string bytes = serialize_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 4), "PXCK");
  EXPECT_EQ(bytes.size(), 4 + 6 * 4 + 8 + ck.params.size() * 4);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.spec, s);
  EXPECT_EQ(back.step, 1234u);
  EXPECT_EQ(back.params.values(), ck.params.values());
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
}

}  // namespace
}  // namespace pixscale
