#include <gtest/gtest.h>

#include "hyperkan/gradcheck.hpp"
#include "hyperkan/nn/modules.hpp"
#include "oracles.hpp"

using namespace hyperkan;

namespace {

KanConfig identity_cfg(int g = 2) {
  KanConfig cfg;
  cfg.grid_size = g;
  cfg.base = BaseFn::identity;
  return cfg;
}

void randomize(std::vector<Tensor<double>> params, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& p : params)
    for (auto& v : p.mutable_values()) v = rng.uniform(lo, hi);
}

ConvSpec conv_spec(std::size_t in, std::size_t out, std::vector<std::size_t> kernel,
                   std::vector<std::size_t> stride = {}, std::vector<std::size_t> pad = {}) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = std::move(kernel);
  s.stride = std::move(stride);
  s.padding.amount = std::move(pad);
  return s;
}

Tensor<double> weighted_sum(const Tensor<double>& y, const Tensor<double>& w) { return sum(mul(y, w)); }

}  // namespace

// ---- KAN linear ----

TEST(KanLinear, IdentityBaseWithoutSplineIsMatmul) {
  Rng rng(1);
  for (auto kind : {BasisKind::spline, BasisKind::rbf}) {
    KanLinear<double> layer(5, 3, identity_cfg(), kind, false, rng);
    for (auto& v : layer.edges().w_s.mutable_values()) v = 0.0;
    auto x = oracle::random_tensor<double>({4, 5}, rng);
    auto y = layer.forward(x);
    auto ref = matmul(x, transpose(layer.edges().w_b));
    EXPECT_LT(oracle::max_abs_diff(y.values(), ref.vector()), 1e-6);
  }
}

TEST(KanLinear, ConstantCoefficientsSumWsByPartitionOfUnity) {
  Rng rng(2);
  KanLinear<double> layer(4, 3, KanConfig{}, BasisKind::spline, false, rng);
  for (auto& v : layer.edges().w_b.mutable_values()) v = 0.0;
  for (auto& v : layer.edges().c.mutable_values()) v = 0.7;
  auto x = oracle::random_tensor<double>({6, 4}, rng);
  auto y = layer.forward(x);
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t j = 0; j < 3; ++j) {
      double expect = 0;
      for (std::size_t i = 0; i < 4; ++i) expect += 0.7 * layer.edges().w_s[j * 4 + i];
      EXPECT_NEAR(y[n * 3 + j], expect, 1e-12);
    }
}

TEST(KanLinear, MatchesPerEdgeSumOracle) {
  Rng rng(3);
  for (auto base : {BaseFn::prelu, BaseFn::identity, BaseFn::silu})
    for (auto kind : {BasisKind::spline, BasisKind::rbf}) {
      KanConfig cfg;
      cfg.base = base;
      KanLinear<double> layer(3, 2, cfg, kind, false, rng);
      randomize(layer.parameters(), rng);
      auto x = oracle::random_tensor<double>({5, 3}, rng, -1.3, 1.3);
      auto y = layer.forward(x);
      std::vector<double> ref(10, 0.0);
      for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t i = 0; i < 3; ++i)
            ref[n * 2 + j] += oracle::edge_phi(layer.edges(), layer.basis(), base, j * 3 + i, x[n * 3 + i]);
      EXPECT_LT(oracle::max_abs_diff(y.values(), ref), 1e-5) << to_string(base) << " " << to_string(kind);
    }
}

TEST(KanLinear, TokenwiseOnRankThree) {
  Rng rng(4);
  KanLinear<double> layer(4, 6, KanConfig{}, false, rng);
  auto x = oracle::random_tensor<double>({2, 3, 4}, rng);
  auto y = layer.forward(x);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 6}));
  auto flat = layer.forward(reshape(x, {6, 4}));
  EXPECT_EQ(y.vector(), flat.vector());
}

TEST(KanLinear, ExtentMismatchIsShapeError) {
  Rng rng(5);
  KanLinear<double> layer(4, 2, KanConfig{}, false, rng);
  EXPECT_THROW(layer.forward(Tensor<double>({3, 5}, 0.0)), ShapeError);
}

TEST(KanLinear, DefaultsAndInitialization) {
  Rng rng(6);
  KanConfig cfg;
  cfg.grid_size = 5;
  KanLinear<double> layer(16, 8, cfg, false, rng);
  EXPECT_EQ(layer.basis().kind(), BasisKind::spline);
  const auto& e = layer.edges();
  EXPECT_EQ(e.c.shape(), (Shape{8, 16, 8}));
  for (double v : e.w_s.values()) EXPECT_EQ(v, 1.0);
  for (double v : e.w_b.values()) EXPECT_LE(std::abs(v), 1.0 / 4.0);
  EXPECT_DOUBLE_EQ(e.slope[0], 0.25);
  // Initial splines evaluate to noise of amplitude at most 0.1 / G at the grid points.
  const auto& grid = layer.basis().grid();
  for (std::size_t edge = 0; edge < 8 * 16; edge += 7)
    for (int m = 0; m <= cfg.grid_size; ++m) {
      const auto b = grid.values(grid.lo() + m * grid.spacing());
      double s = 0;
      for (std::size_t t = 0; t < b.size(); ++t) s += e.c[edge * b.size() + t] * b[t];
      EXPECT_LE(std::abs(s), 0.05 / cfg.grid_size + 1e-9);
    }
}

TEST(KanLinear, ParameterCountFollowsClosedForm) {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    KanConfig cfg;
    cfg.grid_size = 1 + static_cast<int>(rng.below(12));
    cfg.order = static_cast<int>(rng.below(4));
    cfg.base = trial % 3 == 0 ? BaseFn::silu : BaseFn::prelu;
    const std::size_t in = 1 + rng.below(9), out = 1 + rng.below(9);
    const bool bn = trial % 2 == 0;
    KanLinear<double> layer(in, out, cfg, bn, rng);
    const std::size_t expect = out * in * static_cast<std::size_t>(cfg.grid_size + cfg.order) + 2 * out * in +
                               (cfg.base == BaseFn::prelu ? 1 : 0) + (bn ? 2 * in : 0);
    EXPECT_EQ(layer.parameter_count(), expect);
  }
}

// ---- classical and KAN convolution ----

TEST(Conv, OutputExtentArithmetic) {
  Rng rng(10);
  Conv<double> c1(conv_spec(1, 1, {3}), false, rng);
  EXPECT_EQ(c1.forward(Tensor<double>({1, 1, 5}, 1.0)).shape(), (Shape{1, 1, 3}));
  Conv<double> c2(conv_spec(2, 4, {3, 3}, {2, 2}, {1, 1}), true, rng);
  EXPECT_EQ(c2.forward(Tensor<double>({3, 2, 7, 6}, 1.0)).shape(), (Shape{3, 4, 4, 3}));
  Conv<double> c3(conv_spec(1, 1, {5, 3, 3}), false, rng);
  EXPECT_THROW(c3.forward(Tensor<double>({1, 1, 4, 3, 3}, 1.0)), ShapeError);
}

TEST(Conv, AllOnesKernelOnConstantImage) {
  Rng rng(11);
  Conv<double> c(conv_spec(1, 1, {3, 3}), false, rng);
  for (auto& v : c.weight().mutable_values()) v = 1.0;
  auto y = c.forward(Tensor<double>({1, 1, 6, 5}, 0.4));
  for (double v : y.values()) EXPECT_NEAR(v, 9 * 0.4, 1e-12);
}

TEST(Conv, MatchesNestedLoopOracle) {
  Rng rng(12);
  for (std::size_t dims = 1; dims <= 3; ++dims) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(3), co = 1 + rng.below(3);
      std::vector<std::size_t> kernel, stride, extent;
      for (std::size_t d = 0; d < dims; ++d) {
        kernel.push_back(1 + rng.below(3));
        stride.push_back(1 + rng.below(2));
        extent.push_back(kernel.back() + rng.below(4));
      }
      Shape xs{n, ci}, ws{co, ci};
      xs.insert(xs.end(), extent.begin(), extent.end());
      ws.insert(ws.end(), kernel.begin(), kernel.end());
      const auto xv = oracle::random_vec(numel(xs), rng), wv = oracle::random_vec(numel(ws), rng),
                 bv = oracle::random_vec(co, rng);
      std::vector<std::size_t> out_shape;
      const auto ref = oracle::conv_nested(xv, xs, wv, ws, bv, stride, out_shape);
      auto y = conv(oracle::tensor<double>(xs, xv), oracle::tensor<double>(ws, wv), oracle::tensor<double>({co}, bv),
                    stride);
      ASSERT_EQ(y.shape(), out_shape);
      EXPECT_LT(oracle::max_abs_diff(y.values(), ref), 1e-5) << "dims " << dims;
    }
  }
}

TEST(Conv, ReflectPaddingPreservesExtent) {
  Rng rng(13);
  ConvSpec s = conv_spec(1, 1, {3, 3}, {}, {1, 1});
  s.padding.mode = PadMode::reflect;
  Conv<double> c(s, false, rng);
  for (auto& v : c.weight().mutable_values()) v = 0.0;
  c.weight().mutable_values()[0] = 1.0;  // top-left tap reads (r-1, c-1)
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto y = c.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_DOUBLE_EQ(y[0], 5.0);  // reflect(-1) = 1 on both axes
  EXPECT_DOUBLE_EQ(y[4], 1.0);
}

TEST(KanConv, IdentityEdgesEqualAllOnesConvolution) {
  Rng rng(14);
  for (std::size_t dims = 1; dims <= 3; ++dims) {
    std::vector<std::size_t> kernel(dims, 2), extent(dims, 4);
    ConvSpec s = conv_spec(2, 3, kernel);
    KanConv<double> k(s, identity_cfg(), rng);
    for (auto& v : k.edges().w_b.mutable_values()) v = 1.0;
    for (auto& v : k.edges().w_s.mutable_values()) v = 0.0;
    Conv<double> c(s, false, rng);
    for (auto& v : c.weight().mutable_values()) v = 1.0;
    Shape xs{2, 2};
    xs.insert(xs.end(), extent.begin(), extent.end());
    auto x = oracle::random_tensor<double>(xs, rng);
    EXPECT_LT(oracle::max_abs_diff(k.forward(x).values(), c.forward(x).vector()), 1e-6);
  }
}

TEST(KanConv, ZeroInputEvaluatesSplineAtZero) {
  Rng rng(15);
  KanConv<double> k(conv_spec(2, 2, {3, 3}), KanConfig{}, rng);
  randomize({k.edges().c, k.edges().w_s}, rng);
  auto y = k.forward(Tensor<double>({1, 2, 4, 4}, 0.0));
  const auto& e = k.edges();
  for (std::size_t o = 0; o < 2; ++o) {
    double expect = 0;
    for (std::size_t edge = o * 18; edge < (o + 1) * 18; ++edge)
      expect += oracle::edge_phi(e, k.basis(), BaseFn::prelu, edge, 0.0);
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(y[o * 4 + p], expect, 1e-12);
  }
}

TEST(KanConv, MatchesPerPositionEdgeOracle) {
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ci = 1 + rng.below(2), co = 1 + rng.below(2), kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const std::size_t h = kh + rng.below(3), w = kw + rng.below(3);
    KanConfig cfg;
    cfg.grid_size = 2 + static_cast<int>(rng.below(4));
    const auto kind = trial % 2 ? BasisKind::spline : BasisKind::rbf;
    KanConv<double> k(conv_spec(ci, co, {kh, kw}), cfg, kind, rng);
    randomize(k.parameters(), rng);
    auto x = oracle::random_tensor<double>({1, ci, h, w}, rng, -1.5, 1.5);
    auto y = k.forward(x);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    std::vector<double> ref(co * oh * ow, 0.0);
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c)
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const std::size_t edge = ((o * ci + i) * kh + a) * kw + b;
                ref[(o * oh + r) * ow + c] +=
                    oracle::edge_phi(k.edges(), k.basis(), BaseFn::prelu, edge, x[(i * h + r + a) * w + c + b]);
              }
    EXPECT_LT(oracle::max_abs_diff(y.values(), ref), 1e-5);
  }
}

TEST(KanConv, DefaultsToRbfBasisAndMatchesClassicalShape) {
  Rng rng(17);
  ConvSpec s = conv_spec(3, 5, {3, 2, 2}, {2, 1, 1}, {1, 0, 0});
  KanConv<double> k(s, KanConfig{}, rng);
  Conv<double> c(s, true, rng);
  EXPECT_EQ(k.basis().kind(), BasisKind::rbf);
  auto x = oracle::random_tensor<double>({2, 3, 7, 4, 4}, rng);
  EXPECT_EQ(k.forward(x).shape(), c.forward(x).shape());
  const std::size_t edges = 5 * 3 * 12;
  EXPECT_EQ(k.parameter_count(), edges * 5 + 2 * edges + 1);
}

// ---- batch norm, activations, pooling, softmax ----

TEST(BatchNorm, TrainModeStandardizesFeatures) {
  Rng rng(20);
  BatchNorm<double> bn(3);
  auto x = oracle::random_tensor<double>({16, 3, 2}, rng, -3.0, 5.0);
  auto y = bn.forward(x);
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 16; ++n)
      for (std::size_t s = 0; s < 2; ++s) m += y[(n * 3 + f) * 2 + s];
    m /= 32;
    for (std::size_t n = 0; n < 16; ++n)
      for (std::size_t s = 0; s < 2; ++s) v += std::pow(y[(n * 3 + f) * 2 + s] - m, 2);
    v /= 32;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, ConstantFeatureMapsToZero) {
  BatchNorm<double> bn(2);
  Tensor<double> x({4, 2}, std::vector<double>{3, 1, 3, 2, 3, 5, 3, 7});
  auto y = bn.forward(x);
  for (std::size_t n = 0; n < 4; ++n) EXPECT_DOUBLE_EQ(y[n * 2], 0.0);
}

TEST(BatchNorm, SingleSampleTrainingIsContractError) {
  BatchNorm<double> bn(2);
  EXPECT_THROW(bn.forward(Tensor<double>({1, 2}, 1.0)), ContractError);
  bn.set_training(false);
  EXPECT_NO_THROW(bn.forward(Tensor<double>({1, 2}, 1.0)));
}

TEST(BatchNorm, EvalUsesStoredStatisticsAndIsPure) {
  Rng rng(21);
  BatchNorm<double> bn(2);
  for (int i = 0; i < 3; ++i) bn.forward(oracle::random_tensor<double>({8, 2}, rng, 0.0, 4.0));
  randomize({bn.gamma(), bn.beta()}, rng);
  bn.set_training(false);
  const auto mean = bn.running_mean().vector(), var = bn.running_var().vector();
  auto x = oracle::random_tensor<double>({5, 2}, rng);
  auto y1 = bn.forward(x);
  auto y2 = bn.forward(x);
  EXPECT_EQ(y1.vector(), y2.vector());
  EXPECT_EQ(bn.running_mean().vector(), mean);
  EXPECT_EQ(bn.running_var().vector(), var);
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t f = 0; f < 2; ++f) {
      const double expect = (x[n * 2 + f] - mean[f]) / std::sqrt(var[f] + 1e-5) * bn.gamma()[f] + bn.beta()[f];
      EXPECT_DOUBLE_EQ(y1[n * 2 + f], expect);
    }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  BatchNorm<double> bn(1);
  Tensor<double> x({4, 1}, std::vector<double>{1, 2, 3, 6});
  bn.forward(x);
  EXPECT_NEAR(bn.running_mean()[0], 0.9 * 0.0 + 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(bn.running_var()[0], 0.9 * 1.0 + 0.1 * (14.0 / 3.0), 1e-12);
}

TEST(PRelu, ValuesAndSlopeGradient) {
  Tensor<double> a({1}, 0.25);
  Tensor<double> x({4}, std::vector<double>{-4, 0, 2, -1});
  EXPECT_EQ(prelu(x, a).vector(), (std::vector<double>{-1, 0, 2, -0.25}));
  a.set_requires_grad();
  sum(prelu(x, a)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], -5.0);
  auto r = gradcheck<double>([&] { return sum(mul(prelu(x, a), x)); }, {a}, 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.message;
}

TEST(MaxPool, WindowMaximaAndRemainderDropped) {
  Tensor<double> x({1, 1, 4}, std::vector<double>{1, 5, 2, 4});
  EXPECT_EQ(maxpool(x, {2}).vector(), (std::vector<double>{5, 4}));
  Tensor<double> c({1, 2, 7}, 3.0);
  auto y = maxpool(c, {3});
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 3.0);
  EXPECT_THROW(maxpool(x, {5}), ShapeError);
}

TEST(MaxPool, GradientReachesOnlyArgmax) {
  Tensor<double> x({1, 1, 4}, std::vector<double>{1, 5, 2, 4});
  x.set_requires_grad();
  sum(maxpool(x, {2})).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 1}));
}

TEST(Softmax, HandValuesAndShiftInvariance) {
  Tensor<double> u({1, 4}, 0.3);
  auto uniform = softmax(u, 1);
  for (double v : uniform.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  Tensor<double> x({1, 2}, std::vector<double>{0.0, std::log(3.0)});
  auto y = softmax(x, 1);
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
  Rng rng(22);
  auto z = oracle::random_tensor<double>({3, 5}, rng);
  auto shifted = softmax(add_scalar(z, 1000.0), 1);
  EXPECT_LT(oracle::max_abs_diff(shifted.values(), softmax(z, 1).vector()), 1e-6);
}

TEST(Dropout, IdentityInEvalAndScaledMaskInTraining) {
  Dropout<double> d(0.5, 9);
  Tensor<double> x({1000}, 1.0);
  auto y = d.forward(x);
  std::size_t kept = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v > 0;
  }
  EXPECT_GT(kept, 400u);
  EXPECT_LT(kept, 600u);
  d.set_training(false);
  EXPECT_EQ(d.forward(x).vector(), x.vector());
  EXPECT_THROW(Dropout<double>(1.0, 1), ContractError);
}

// ---- attention ----

TEST(Attention, MatchesStepByStepOracle) {
  Rng rng(30);
  for (std::size_t heads : {1u, 2u}) {
    for (int trial = 0; trial < 10; ++trial) {
      Attention<double> attn(4, heads, false, KanConfig{}, rng);
      const std::size_t n = 2, t = 2 + rng.below(3);
      auto x = oracle::random_tensor<double>({n, t, 4}, rng);
      std::vector<double> w0 = attn.projection(0).parameters()[0].vector(),
                          w1 = attn.projection(1).parameters()[0].vector(),
                          w2 = attn.projection(2).parameters()[0].vector();
      const std::vector<double>* w[3] = {&w0, &w1, &w2};
      const auto ref = oracle::attention(x.vector(), n, t, 4, heads, w);
      EXPECT_LT(oracle::max_abs_diff(attn.forward(x).values(), ref), 1e-5);
    }
  }
}

TEST(Attention, WeightsAreRowStochastic) {
  Rng rng(31);
  for (bool kan : {false, true}) {
    Attention<double> attn(8, 2, kan, KanConfig{}, rng);
    auto [out, w] = attn.forward_with_weights(oracle::random_tensor<double>({3, 5, 8}, rng, -2, 2));
    ASSERT_EQ(w.shape(), (Shape{6, 5, 5}));
    for (std::size_t r = 0; r < 30; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_GE(w[r * 5 + c], 0.0);
        s += w[r * 5 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, SingleTokenReturnsValueProjection) {
  Rng rng(32);
  for (bool kan : {false, true}) {
    Attention<double> attn(4, 1, kan, KanConfig{}, rng);
    auto x = oracle::random_tensor<double>({2, 1, 4}, rng);
    auto [out, w] = attn.forward_with_weights(x);
    for (double v : w.values()) EXPECT_DOUBLE_EQ(v, 1.0);
    auto v = attn.projection(2).forward(x);
    EXPECT_LT(oracle::max_abs_diff(out.values(), v.vector()), 1e-12);
  }
}

TEST(Attention, IdenticalTokensShareWeightEqually) {
  Rng rng(33);
  Attention<double> attn(4, 1, true, KanConfig{}, rng);
  auto tok = oracle::random_vec(4, rng);
  std::vector<double> xv(tok);
  xv.insert(xv.end(), tok.begin(), tok.end());
  auto [out, w] = attn.forward_with_weights(oracle::tensor<double>({1, 2, 4}, xv));
  for (double v : w.values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(Attention, ClassicalAndKanShapesAgree) {
  Rng rng(34);
  Attention<double> a(8, 2, false, KanConfig{}, rng), b(8, 2, true, KanConfig{}, rng);
  auto x = oracle::random_tensor<double>({3, 6, 8}, rng);
  EXPECT_EQ(a.forward(x).shape(), b.forward(x).shape());
  TransformerEncoder<double> e1(8, 2, false, KanConfig{}, rng), e2(8, 2, true, KanConfig{}, rng);
  EXPECT_EQ(e1.forward(x).shape(), x.shape());
  EXPECT_EQ(e2.forward(x).shape(), x.shape());
  EXPECT_THROW(Attention<double>(6, 4, false, KanConfig{}, rng), ContractError);
  EXPECT_THROW(a.forward(Tensor<double>({1, 2, 7}, 0.0)), ShapeError);
}

TEST(Tokenizer, ProducesClassTokenPlusSemanticTokens) {
  Rng rng(35);
  Tokenizer<double> tok(6, 4, rng);
  auto y = tok.forward(oracle::random_tensor<double>({2, 6, 3, 3}, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 5, 6}));
}

// ---- gradient suite over every layer type ----

class LayerGradients : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradients, AllLayersPassGradcheck) {
  Rng rng(1000 + GetParam());
  const double tol = 1e-3;
  auto check = [&](const char* name, Module<double>& m, Tensor<double> x) {
    auto probe = oracle::random_tensor<double>(m.forward(x).shape(), rng);
    std::vector<Tensor<double>> wrt{x};
    for (auto& p : m.parameters()) wrt.push_back(p);
    auto r = gradcheck<double>([&] { return weighted_sum(m.forward(x), probe); }, wrt, 1e-6, tol);
    EXPECT_TRUE(r.passed) << name << ": " << r.message;
  };
  KanConfig cfg;
  cfg.grid_size = 3;
  {
    KanLinear<double> m(4, 3, cfg, BasisKind::spline, true, rng);
    randomize({m.edges().w_s}, rng);
    check("kan_linear spline", m, oracle::random_tensor<double>({5, 4}, rng));
  }
  {
    KanLinear<double> m(4, 3, cfg, BasisKind::rbf, false, rng);
    check("kan_linear rbf", m, oracle::random_tensor<double>({5, 4}, rng));
  }
  {
    KanConv<double> m(conv_spec(2, 2, {3}, {2}), cfg, rng);
    check("kan_conv 1d", m, oracle::random_tensor<double>({2, 2, 7}, rng));
  }
  {
    KanConv<double> m(conv_spec(2, 2, {2, 2}, {}, {1, 0}), cfg, BasisKind::spline, rng);
    check("kan_conv 2d", m, oracle::random_tensor<double>({2, 2, 3, 3}, rng));
  }
  {
    KanConv<double> m(conv_spec(1, 2, {2, 2, 2}), cfg, rng);
    check("kan_conv 3d", m, oracle::random_tensor<double>({2, 1, 3, 3, 3}, rng));
  }
  {
    Conv<double> m(conv_spec(2, 3, {2, 3, 2}, {1, 2, 1}, {0, 1, 0}), true, rng);
    check("conv 3d", m, oracle::random_tensor<double>({2, 2, 3, 4, 3}, rng));
  }
  {
    BatchNorm<double> m(3);
    randomize({m.gamma(), m.beta()}, rng);
    check("batchnorm", m, oracle::random_tensor<double>({4, 3, 2}, rng));
  }
  {
    Activation<double> m(ActKind::prelu);
    check("prelu", m, oracle::random_tensor<double>({3, 5}, rng));
  }
  {
    MaxPool<double> m({2, 2});
    check("maxpool", m, oracle::random_tensor<double>({2, 2, 4, 5}, rng));
  }
  for (bool kan : {false, true}) {
    Attention<double> m(4, 2, kan, cfg, rng);
    check(kan ? "attention kan" : "attention", m, oracle::random_tensor<double>({2, 3, 4}, rng));
    TransformerEncoder<double> e(4, 1, kan, cfg, rng);
    check(kan ? "encoder kan" : "encoder", e, oracle::random_tensor<double>({2, 3, 4}, rng));
    ConvBlock<double> b(2, 1, kan, true, cfg, rng);
    check(kan ? "conv_block kan" : "conv_block", b, oracle::random_tensor<double>({2, 2, 7, 1, 1}, rng));
  }
  {
    Tokenizer<double> m(3, 2, rng);
    check("tokenizer", m, oracle::random_tensor<double>({2, 3, 2, 2}, rng));
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, LayerGradients, ::testing::Range(0, 5));
