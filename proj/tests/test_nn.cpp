#include <gtest/gtest.h>

#include <cmath>

#include "cparr/gradcheck.hpp"
#include "cparr/nn.hpp"
#include "cparr/rng.hpp"

using namespace cparr;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Scalar probe loss: sum of outputs weighted by a fixed random projection,
// so d loss / d output is the projection itself.
double weighted_sum(const Tensor& y, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * weights.data[i];
  return s;
}

}  // namespace

TEST(Dense, IdentityWeightsZeroBias) {
  DenseParams p = DenseParams::zeros(3, 3);
  for (std::size_t i = 0; i < 3; ++i) p.weights.at(i, i) = 1.0;
  Rng rng(1);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor y = dense_apply(p, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
}

TEST(Dense, ZeroInputGivesBias) {
  Rng rng(2);
  DenseParams p = DenseParams::init(5, 3, rng);
  p.bias.data = {0.5, -1.0, 2.0};
  Tensor x({2, 5});
  const Tensor y = dense_apply(p, x);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(y.at(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(y.at(i, 1), -1.0);
    EXPECT_DOUBLE_EQ(y.at(i, 2), 2.0);
  }
}

TEST(Dense, ShapeMismatchThrows) {
  Rng rng(3);
  DenseParams p = DenseParams::init(4, 2, rng);
  EXPECT_THROW(dense_apply(p, Tensor({3, 5})), std::invalid_argument);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  DenseParams p = DenseParams::init(4, 3, rng);
  Tensor x = random_tensor({4, 4}, rng);
  const Tensor proj = random_tensor({4, 3}, rng);

  const auto loss = [&]() { return weighted_sum(dense_apply(p, x), proj); };
  const DenseGrads g = dense_grad(p, x, proj);
  const double err = finite_diff_check(loss, {&p.weights, &p.bias, &x},
                                       {&g.d_weights, &g.d_bias, &g.d_input}, 1e-5);
  EXPECT_LT(err, 1e-7);  // linear in every argument
}

TEST(Conv2d, OneByOneIdentityChannelMix) {
  ConvParams p = ConvParams::zeros(1, 2, 2);
  p.kernels.data[0] = 1.0;  // {0,0,0,0}
  p.kernels.data[3] = 1.0;  // {0,0,1,1}
  Rng rng(5);
  const Tensor x = random_tensor({5, 4, 2}, rng);
  const Tensor y = conv2d_apply(p, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
}

TEST(Conv2d, ZeroKernelsGiveBiasEverywhere) {
  ConvParams p = ConvParams::zeros(3, 2, 3);
  p.bias.data = {1.0, -2.0, 0.25};
  Tensor x({4, 4, 2});
  x.fill(0.7);
  const Tensor y = conv2d_apply(p, x);
  for (std::size_t yy = 0; yy < 4; ++yy) {
    for (std::size_t xx = 0; xx < 4; ++xx) {
      EXPECT_DOUBLE_EQ(y.at(yy, xx, 0), 1.0);
      EXPECT_DOUBLE_EQ(y.at(yy, xx, 1), -2.0);
      EXPECT_DOUBLE_EQ(y.at(yy, xx, 2), 0.25);
    }
  }
}

TEST(Conv2d, EvenKernelRejected) {
  Rng rng(6);
  EXPECT_THROW(ConvParams::init(2, 1, 1, rng), std::invalid_argument);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  ConvParams p = ConvParams::init(3, 2, 3, rng);
  Tensor x = random_tensor({5, 5, 2}, rng);
  const Tensor proj = random_tensor({5, 5, 3}, rng);

  const auto loss = [&]() { return weighted_sum(conv2d_apply(p, x), proj); };
  const ConvGrads g = conv2d_grad(p, x, proj);
  const double err = finite_diff_check(loss, {&p.kernels, &p.bias, &x},
                                       {&g.d_kernels, &g.d_bias, &g.d_input}, 1e-5);
  EXPECT_LT(err, 1e-7);
}

TEST(Activations, ReluValues) {
  const Tensor y = relu(Tensor::from_values({3}, {-2.0, 0.0, 3.0}));
  EXPECT_DOUBLE_EQ(y.data[0], 0.0);
  EXPECT_DOUBLE_EQ(y.data[1], 0.0);
  EXPECT_DOUBLE_EQ(y.data[2], 3.0);
}

TEST(Activations, SigmoidValues) {
  EXPECT_DOUBLE_EQ(sigmoid_scalar(0.0), 0.5);
  const double hi = sigmoid_scalar(50.0), lo = sigmoid_scalar(-50.0);
  EXPECT_TRUE(std::isfinite(hi));
  EXPECT_TRUE(std::isfinite(lo));
  EXPECT_GT(hi, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_GT(lo, 0.0);
  EXPECT_LT(lo, 1.0);
}

TEST(SigmoidCe, AnalyticAtZeroLogit) {
  const LossResult r = sigmoid_ce_loss(Tensor::from_values({1}, {0.0}),
                                       Tensor::from_values({1}, {1.0}));
  EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
}

TEST(SigmoidCe, SaturatedCorrectIsStable) {
  const LossResult r = sigmoid_ce_loss(Tensor::from_values({1}, {50.0}),
                                       Tensor::from_values({1}, {1.0}));
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_LT(r.value, 1e-20);
}

TEST(SigmoidCe, RejectsNonBinaryTargets) {
  EXPECT_THROW(sigmoid_ce_loss(Tensor::from_values({1}, {0.0}),
                               Tensor::from_values({1}, {0.5})),
               std::invalid_argument);
}

TEST(SigmoidCe, NonNegative) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    Tensor z = random_tensor({6}, rng, 4.0);
    Tensor t({6});
    for (double& v : t.data) v = rng.chance(0.5) ? 1.0 : 0.0;
    EXPECT_GE(sigmoid_ce_loss(z, t).value, 0.0);
  }
}

TEST(SigmoidCe, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor z = random_tensor({3, 4}, rng, 2.0);
  Tensor t({3, 4});
  for (double& v : t.data) v = rng.chance(0.5) ? 1.0 : 0.0;
  const LossResult r = sigmoid_ce_loss(z, t);
  const auto loss = [&]() { return sigmoid_ce_loss(z, t).value; };
  EXPECT_LT(finite_diff_check(loss, {&z}, {&r.grad}, 1e-5), 1e-4);
}

TEST(SmoothL1, ZeroWhenEqual) {
  Rng rng(10);
  const Tensor a = random_tensor({5, 4}, rng);
  EXPECT_DOUBLE_EQ(smooth_l1_loss(a, a).value, 0.0);
}

TEST(SmoothL1, QuadraticBranchCase) {
  Tensor pred({1, 4}), gt({1, 4});
  pred.data = {0.5, 0.0, 0.0, 0.0};
  const LossResult r = smooth_l1_loss(pred, gt);
  EXPECT_NEAR(r.value, 0.03125, 1e-12);
}

TEST(SmoothL1, LinearBranchCase) {
  Tensor pred({1, 4}), gt({1, 4});
  pred.data = {2.0, 0.0, 0.0, 0.0};
  const LossResult r = smooth_l1_loss(pred, gt);
  EXPECT_NEAR(r.value, 0.375, 1e-12);
}

TEST(SmoothL1, EmptyInputThrows) {
  EXPECT_THROW(smooth_l1_loss(Tensor({0, 4}), Tensor({0, 4})), std::invalid_argument);
}

TEST(SmoothL1, SignSymmetric) {
  Tensor pred({1, 4}), gt({1, 4});
  pred.data = {1.7, -0.3, 0.0, 0.0};
  Tensor neg_pred({1, 4});
  for (std::size_t i = 0; i < 4; ++i) neg_pred.data[i] = -pred.data[i];
  EXPECT_DOUBLE_EQ(smooth_l1_loss(pred, gt).value, smooth_l1_loss(neg_pred, gt).value);
}

TEST(SmoothL1, ContinuousAndC1AtUnitDifference) {
  const double eps = 1e-10;
  Tensor below({1, 4}), above({1, 4}), gt({1, 4});
  below.data = {1.0 - eps, 0.0, 0.0, 0.0};
  above.data = {1.0 + eps, 0.0, 0.0, 0.0};
  const LossResult lb = smooth_l1_loss(below, gt);
  const LossResult la = smooth_l1_loss(above, gt);
  EXPECT_NEAR(lb.value, la.value, 1e-9);
  EXPECT_NEAR(lb.grad.at(0, 0), la.grad.at(0, 0), 1e-9);
}

TEST(SmoothL1, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor pred = random_tensor({6, 4}, rng, 2.0);
  const Tensor gt = random_tensor({6, 4}, rng, 2.0);
  const LossResult r = smooth_l1_loss(pred, gt);
  const auto loss = [&]() { return smooth_l1_loss(pred, gt).value; };
  EXPECT_LT(finite_diff_check(loss, {&pred}, {&r.grad}, 1e-6), 1e-4);
}

TEST(Adam, ZeroGradientIsIdentity) {
  Rng rng(12);
  Tensor w = random_tensor({4, 4}, rng);
  const Tensor before = w;
  AdamState s = AdamState::create({&w});
  adam_step(s, {&w}, {Tensor({4, 4})});
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(w.data[i], before.data[i]);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Tensor w = Tensor::from_values({2}, {1.0, -1.0});
  AdamState s = AdamState::create({&w});
  Tensor g = Tensor::from_values({2}, {0.5, -0.25});
  adam_step(s, {&w}, {g});
  EXPECT_NEAR(w.data[0], 1.0 - 1e-4, 1e-9);
  EXPECT_NEAR(w.data[1], -1.0 + 1e-4, 1e-9);
}

TEST(Adam, DefaultsMatchExpectedHyperparameters) {
  Tensor w({1});
  AdamState s = AdamState::create({&w});
  EXPECT_DOUBLE_EQ(s.lr, 1e-4);
  EXPECT_DOUBLE_EQ(s.beta1, 0.9);
  EXPECT_DOUBLE_EQ(s.beta2, 0.999);
  EXPECT_DOUBLE_EQ(s.eps, 1e-8);
}

TEST(Adam, NonFiniteGradientAborts) {
  Tensor w({1});
  AdamState s = AdamState::create({&w});
  Tensor g({1});
  g.data[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step(s, {&w}, {g}), std::runtime_error);
}

// Property sweep: random small dense and conv layers across 20 seeds.
TEST(GradCheckProperty, RandomLayersAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    {
      const std::size_t in = 2 + rng.index(5), out = 1 + rng.index(5), n = 1 + rng.index(4);
      DenseParams p = DenseParams::init(in, out, rng);
      Tensor x = random_tensor({n, in}, rng);
      const Tensor proj = random_tensor({n, out}, rng);
      const auto loss = [&]() { return weighted_sum(dense_apply(p, x), proj); };
      const DenseGrads g = dense_grad(p, x, proj);
      EXPECT_LT(finite_diff_check(loss, {&p.weights, &p.bias, &x},
                                  {&g.d_weights, &g.d_bias, &g.d_input}, 1e-5),
                1e-4);
    }
    {
      const std::size_t ic = 1 + rng.index(3), oc = 1 + rng.index(3);
      const std::size_t k = rng.chance(0.5) ? 1 : 3;
      ConvParams p = ConvParams::init(k, ic, oc, rng);
      Tensor x = random_tensor({4, 4, ic}, rng);
      const Tensor proj = random_tensor({4, 4, oc}, rng);
      const auto loss = [&]() { return weighted_sum(conv2d_apply(p, x), proj); };
      const ConvGrads g = conv2d_grad(p, x, proj);
      EXPECT_LT(finite_diff_check(loss, {&p.kernels, &p.bias, &x},
                                  {&g.d_kernels, &g.d_bias, &g.d_input}, 1e-5),
                1e-4);
    }
  }
}
