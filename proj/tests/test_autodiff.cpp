#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lightnmt/autodiff.hpp"
#include "gradcheck.hpp"

namespace lightnmt {
namespace {

using TD = Tensor<double>;
using VD = Var<double>;

TD random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  TD t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto a = TD::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  EXPECT_EQ(kernels::matmul(TD::identity(3), a), a);
}

TEST(Matmul, HandMultiplied) {
  auto c = kernels::matmul(TD::matrix({{1, 2}, {3, 4}}), TD::matrix({{1}, {1}}));
  EXPECT_EQ(c, TD::matrix({{3}, {7}}));
}

TEST(Matmul, ZerosAnnihilate) {
  std::mt19937_64 rng(1);
  auto c = kernels::matmul(TD::zeros(2, 3), random_tensor({3, 4}, rng));
  EXPECT_EQ(c, TD::zeros(2, 4));
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(kernels::matmul(TD::zeros(2, 3), TD::zeros(2, 3)), DimensionError);
  EXPECT_THROW(matmul(VD::constant(TD::zeros(2, 3)), VD::constant(TD::zeros(2, 2))),
               DimensionError);
}

TEST(Matmul, ElementIndependentOfSurroundingRows) {
  // The same row pair must produce bit-identical results inside matrices of
  // different sizes; filtering and batch composition rely on it.
  std::mt19937_64 rng(3);
  auto a = random_tensor({7, 37}, rng);
  auto b = random_tensor({37, 1030}, rng);
  auto full = kernels::matmul(a, b);
  auto row = kernels::matmul(TD({1, 37}, std::vector<double>(a.row_span(5).begin(),
                                                              a.row_span(5).end())),
                             b);
  for (std::size_t j = 0; j < 1030; ++j) EXPECT_EQ(full(5, j), row(0, j));

  auto bt = random_tensor({50, 37}, rng);
  auto nt = kernels::matmul(a, bt, true);
  TD sub({3, 37});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 37; ++c) sub(r, c) = bt(10 + r, c);
  auto nt_sub = kernels::matmul(a, sub, true);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(nt(i, 10 + r), nt_sub(i, r));
}

TEST(Softmax, UniformInput) {
  auto y = kernels::softmax_rows(TD::row({0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto y = kernels::softmax_rows(TD::row({1000, 0}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, LogInputsGiveProportions) {
  auto y = kernels::softmax_rows(TD::row({std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(y[0], 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(y[1], 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(y[2], 3.0 / 6.0, 1e-12);
}

TEST(Softmax, DistributionPropertyOnRandomLargeInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_tensor({3, 17}, rng, 1e4);
    auto y = kernels::softmax_rows(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (double v : y.row_span(r)) {
        ASSERT_GE(v, 0.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
    auto yf = kernels::softmax_rows(x.cast<float>());
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (float v : yf.row_span(r)) s += v;
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  auto y = kernels::layer_norm(TD::row({4, 4, 4, 4}), TD::row({1, 1, 1, 1}),
                               TD::row({0, 0, 0, 0}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementVector) {
  auto y = kernels::layer_norm(TD::row({1, -1}), TD::row({1, 1}), TD::row({0, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-5);
  EXPECT_NEAR(y[1], -1.0, 1e-5);
}

TEST(LayerNorm, ZeroGainCollapsesToBias) {
  std::mt19937_64 rng(2);
  auto y = kernels::layer_norm(random_tensor({3, 5}, rng), TD::row({0, 0, 0, 0, 0}),
                               TD::row({1, 2, 3, 4, 5}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y(r, j), double(j + 1));
}

TEST(LayerNorm, NormalizedSlicesHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({8, 16}, rng, 10.0);
  auto y = kernels::layer_norm(x, TD({16}, 1.0), TD({16}, 0.0));
  for (std::size_t r = 0; r < 8; ++r) {
    double m = 0, v = 0;
    for (double e : y.row_span(r)) m += e;
    m /= 16;
    for (double e : y.row_span(r)) v += (e - m) * (e - m);
    v /= 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(LayerNorm, RejectsSingleElementSlices) {
  EXPECT_THROW(layer_norm(VD::constant(TD({3, 1})), VD::constant(TD({1}, 1.0)),
                          VD::constant(TD({1}, 0.0))),
               DimensionError);
}

TEST(Backward, SumGivesOnes) {
  auto w = VD::parameter(TD::row({1, -2, 3}));
  backward(sum(w));
  EXPECT_EQ(w.grad(), TD::row({1, 1, 1}));
}

TEST(Backward, HalfSquaredNormGivesWeights) {
  auto w = VD::parameter(TD::row({1.5, -2, 0.25}));
  backward(scale(sum(multiply(w, w)), 0.5));
  EXPECT_EQ(w.grad(), w.value());
}

TEST(Backward, NonScalarLossIsContractError) {
  auto w = VD::parameter(TD::row({1, 2}));
  EXPECT_THROW(backward(w), ContractError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto w = VD::parameter(TD::row({2}));
  auto y = multiply(w, w);  // w^2
  auto z = add(y, y);       // 2 w^2
  backward(sum(z));
  EXPECT_DOUBLE_EQ(w.grad()[0], 8.0);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  auto w = VD::parameter(TD::row({1, 2}));
  NoGradGuard guard;
  auto y = multiply(w, w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Dropout, InvertedScalingAndIdentityAtInference) {
  std::mt19937_64 rng(9);
  auto x = VD::constant(TD({1, 10000}, 1.0));
  auto eval = dropout(x, 0.3, false, rng);
  EXPECT_EQ(eval.value(), x.value());
  auto train = dropout(x, 0.3, true, rng);
  double s = 0;
  for (double v : train.value().values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-12);
    s += v;
  }
  EXPECT_NEAR(s / 10000, 1.0, 0.05);

  std::mt19937_64 r1(4), r2(4);
  EXPECT_EQ(dropout(x, 0.5, true, r1).value(), dropout(x, 0.5, true, r2).value());
}

// Every differentiable op checked against central differences in 64-bit.
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  auto a = VD::parameter(random_tensor({3, 4}, rng));
  auto b = VD::parameter(random_tensor({4, 5}, rng));
  auto bt = VD::parameter(random_tensor({5, 4}, rng));
  auto bias = VD::parameter(random_tensor({1, 4}, rng));
  auto c = VD::parameter(random_tensor({3, 4}, rng));
  auto gain = VD::parameter(random_tensor({1, 4}, rng));
  auto table = VD::parameter(random_tensor({6, 4}, rng));
  std::vector<int> ids{2, 0, 2, 5};
  std::vector<int> targets{1, 4, 0};

  struct Case {
    const char* name;
    std::function<VD()> loss;
    std::vector<VD> params;
  };
  auto weighted = [&](const VD& x) {  // a fixed random projection to a scalar
    std::mt19937_64 r(77);
    return sum(multiply(x, VD::constant(random_tensor(x.shape(), r))));
  };
  std::vector<Case> cases{
      {"matmul", [&] { return weighted(matmul(a, b)); }, {a, b}},
      {"matmul_nt", [&] { return weighted(matmul(a, bt, true)); }, {a, bt}},
      {"add_broadcast", [&] { return weighted(add(a, bias)); }, {a, bias}},
      {"add", [&] { return weighted(add(a, c)); }, {a, c}},
      {"multiply", [&] { return weighted(multiply(a, c)); }, {a, c}},
      {"relu", [&] { return weighted(relu(a)); }, {a}},
      {"sigmoid", [&] { return weighted(sigmoid(a)); }, {a}},
      {"tanh", [&] { return weighted(tanh(a)); }, {a}},
      {"softmax", [&] { return weighted(softmax(a)); }, {a}},
      {"layer_norm", [&] { return weighted(layer_norm(a, gain, bias)); }, {a, gain, bias}},
      {"embedding", [&] { return weighted(embedding(table, ids)); }, {table}},
      {"concat_cols", [&] { return weighted(concat_cols<double>({a, c})); }, {a, c}},
      {"concat_rows", [&] { return weighted(concat_rows<double>({a, c})); }, {a, c}},
      {"slice_cols", [&] { return weighted(slice_cols(a, 1, 3)); }, {a}},
      {"slice_rows", [&] { return weighted(slice_rows(a, 1, 3)); }, {a}},
      {"label_smoothed_ce",
       [&] { return label_smoothed_nll_sum(matmul(a, b), targets, 0.1); },
       {a, b}},
  };
  for (auto& cs : cases) {
    auto err = testing::max_relative_grad_error<double>(cs.loss, cs.params, 1e-5);
    EXPECT_LT(err, 1e-4) << cs.name;
  }
}

TEST(GradCheck, RandomTwoLayerNetwork) {
  std::mt19937_64 rng(8);
  auto x = VD::constant(random_tensor({5, 6}, rng));
  auto w1 = VD::parameter(random_tensor({6, 8}, rng));
  auto b1 = VD::parameter(random_tensor({1, 8}, rng));
  auto w2 = VD::parameter(random_tensor({8, 3}, rng));
  auto b2 = VD::parameter(random_tensor({1, 3}, rng));
  std::vector<int> y{0, 2, 1, 1, 2};
  auto loss = [&] {
    auto h = tanh(add(matmul(x, w1), b1));
    return label_smoothed_nll_sum(add(matmul(h, w2), b2), y, 0.0);
  };
  EXPECT_LT(testing::max_relative_grad_error<double>(loss, {w1, b1, w2, b2}, 1e-5), 1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLogVForAnySmoothing) {
  std::vector<int> y{3};
  for (double eps : {0.0, 0.1, 0.5}) {
    auto l = label_smoothed_nll_sum(VD::constant(TD({1, 7}, 0.3)), y, eps);
    EXPECT_NEAR(l.value()[0], std::log(7.0), 1e-12);
  }
}

}  // namespace
}  // namespace lightnmt
