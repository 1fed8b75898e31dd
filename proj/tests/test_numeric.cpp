#include <gtest/gtest.h>

#include <cmath>

#include "kgalign/alignment.hpp"
#include "kgalign/checkpoint.hpp"
#include "kgalign/optim.hpp"
#include "support/builders.hpp"
#include "support/fd_suite.hpp"

using namespace kgalign;

TEST(Numeric, L2NormalizeRowsExample) {
  auto x = constant(Tensor<float>::from_rows({{3, 4}}));
  auto y = l2_normalize_rows(x).value();
  EXPECT_FLOAT_EQ(y(0, 0), 0.6f);
  EXPECT_FLOAT_EQ(y(0, 1), 0.8f);
}

TEST(Numeric, L2NormalizeRowsUnitNormAndZeroRowError) {
  Rng rng(3);
  auto t = kgtest::random_tensor(rng, 7, 5).cast<float>();
  auto y = l2_normalize_rows(constant(t)).value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double s = 0;
    for (float v : y.row(i)) s += double(v) * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-5);
  }
  EXPECT_THROW(l2_normalize_rows(constant(Tensor<float>(2, 3, 0.0f))), std::exception);
}

TEST(Numeric, MeanPoolOfIdenticalRows) {
  auto t = Tensor<float>::from_rows({{1, -2, 3}, {1, -2, 3}, {1, -2, 3}});
  auto y = mean_pool_rows(constant(t)).value();
  EXPECT_EQ(y, Tensor<float>::from_rows({{1, -2, 3}}));
}

TEST(Numeric, SoftmaxCeUniformLogitsIsLogN) {
  for (std::size_t n : {2u, 7u, 64u}) {
    const std::vector<std::size_t> target{0};
    auto l = softmax_ce_rows(constant(Tensor<float>(1, n, 0.0f)), std::span<const std::size_t>(target));
    EXPECT_NEAR(l.value().item(), std::log(double(n)), 1e-6);
  }
}

TEST(Numeric, SoftmaxCeNonNegativeAndNearZeroForLargeMargin) {
  Tensor<float> logits(3, 4, 0.0f);
  std::vector<std::size_t> target{0, 1, 2};
  for (std::size_t i = 0; i < 3; ++i) logits(i, target[i]) = 20.0f;
  const double l = softmax_ce_rows(constant(logits), std::span<const std::size_t>(target)).value().item();
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-4);
}

TEST(Numeric, SoftmaxCeTargetOutOfRange) {
  const std::vector<std::size_t> target{5};
  EXPECT_THROW(softmax_ce_rows(constant(Tensor<float>(1, 3)), std::span<const std::size_t>(target)),
               std::out_of_range);
}

TEST(Numeric, MatmulShapeMismatch) {
  EXPECT_THROW(matmul(constant(Tensor<float>(2, 3)), constant(Tensor<float>(2, 3))), std::exception);
}

TEST(Numeric, BackwardOfSumIsAllOnes) {
  Parameter<float> x("x", Tensor<float>::from_rows({{1, 2}, {3, 4}}));
  backward(sum(leaf(x)));
  EXPECT_EQ(x.grad(), Tensor<float>(2, 2, 1.0f));
}

TEST(Numeric, RepeatedBackwardAccumulates) {
  Parameter<float> x("x", Tensor<float>::from_rows({{1, 2}}));
  backward(sum(leaf(x)));
  backward(sum(leaf(x)));
  EXPECT_EQ(x.grad(), Tensor<float>(1, 2, 2.0f));
  x.zero_grad();
  EXPECT_EQ(x.grad(), Tensor<float>(1, 2, 0.0f));
}

TEST(Numeric, BackwardRejectsNonScalar) {
  Parameter<float> x("x", Tensor<float>(2, 2, 1.0f));
  EXPECT_THROW(backward(leaf(x)), std::exception);
}

TEST(Numeric, TemperatureGradientIsEntryTimesExpTau) {
  Parameter<float> tau("tau", Tensor<float>::scalar(0.4f));
  auto h = constant(Tensor<float>::from_rows({{0.6f, 0.8f}, {1, 0}}));
  auto d = constant(Tensor<float>::from_rows({{0, 1}, {0.8f, 0.6f}}));
  auto s = similarity(h, d, leaf(tau));
  backward(sum(s));
  // HD^T = [[0.8, 0.96], [0, 0.8]]; d/dtau sum(HD^T e^tau) = sum(HD^T) e^tau.
  const double raw = 0.8 + 0.96 + 0.0 + 0.8;
  EXPECT_NEAR(tau.grad().item(), raw * std::exp(0.4), 1e-5);
}

// Every differentiable op, both encoders, the adapter under mock scoring and
// the full alignment objective against double-precision central differences.
class GradientCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientCheck, AllCasesBelowTolerance) {
  for (const auto& [name, r] : kgtest::fd_all_cases(GetParam())) {
    EXPECT_LT(r.rel_err, 1e-3) << name << " worst parameter " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck, ::testing::Values(1, 2, 3, 4, 5, 6));

// --- Adam ---------------------------------------------------------------------

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  Parameter<float> p("p", Tensor<float>::from_rows({{1.5f, -2.0f}}));
  Adam<float> opt({&p}, AdamConfig{0.1, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(10);
  EXPECT_EQ(p.value(), Tensor<float>::from_rows({{1.5f, -2.0f}}));
}

TEST(Adam, FirstWarmupStepHasZeroLearningRate) {
  Parameter<float> p("p", Tensor<float>::scalar(1.0f));
  Adam<float> opt({&p}, AdamConfig{0.1, 0.5});
  p.grad()[0] = 3.0f;
  opt.step(10);
  EXPECT_EQ(p.value().item(), 1.0f);
}

TEST(Adam, TotalStepsZeroIsAnError) {
  Parameter<float> p("p", Tensor<float>::scalar(1.0f));
  Adam<float> opt({&p}, AdamConfig{});
  EXPECT_THROW(opt.step(0), std::invalid_argument);
}

TEST(Adam, ScalarTrajectoryMatchesReference) {
  // Hand-rolled scalar Adam in double: warmup 2 of 12 steps, gradient 1.0.
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::size_t total = 12;
  Parameter<double> p("p", Tensor<double>::scalar(0.25));
  const double ratio = 2.0 / 12.0, warmup = ratio * double(total);
  Adam<double> opt({&p}, AdamConfig{lr, ratio, b1, b2, eps});
  double w = 0.25, m = 0, v = 0;
  for (std::size_t t = 0; t < total; ++t) {
    p.grad()[0] = 1.0;
    opt.step(total);
    const double rate = double(t) < warmup ? lr * double(t) / warmup : lr;
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mhat = m / (1 - std::pow(b1, double(t + 1)));
    const double vhat = v / (1 - std::pow(b2, double(t + 1)));
    w -= rate * mhat / (std::sqrt(vhat) + eps);
    EXPECT_DOUBLE_EQ(p.value().item(), w) << "step " << t;
  }
}

TEST(Adam, WarmupScheduleIsLinearThenConstant) {
  AdamConfig cfg{2e-3, 3e-2};
  EXPECT_EQ(warmup_learning_rate(cfg, 0, 100), 0.0);
  EXPECT_NEAR(warmup_learning_rate(cfg, 1, 100), 2e-3 / 3.0, 1e-15);
  EXPECT_EQ(warmup_learning_rate(cfg, 3, 100), 2e-3);
  EXPECT_EQ(warmup_learning_rate(cfg, 99, 100), 2e-3);
}

// --- Checkpoints --------------------------------------------------------------

TEST(Checkpoint, RoundTripPreservesNamesShapesAndBits) {
  Rng rng(5);
  Parameter<float> a("layer.a", kgtest::random_tensor(rng, 3, 4).cast<float>());
  Parameter<float> b("b", Tensor<float>(std::vector<std::size_t>{2, 1, 3}, 0.5f));
  const std::string bytes = encode_checkpoint({&a, &b});
  EXPECT_EQ(bytes.substr(0, 4), "KGAC");
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("layer.a"), a.value());
  EXPECT_EQ(back.at("b"), b.value());

  const auto dir = kgtest::temp_dir("ckpt");
  save_checkpoint(dir / "c.bin", {&a, &b});
  EXPECT_EQ(kgtest::read_file(dir / "c.bin"), bytes);
  Parameter<float> a2("layer.a", Tensor<float>(3, 4));
  Parameter<float> b2("b", Tensor<float>(std::vector<std::size_t>{2, 1, 3}));
  assign_parameters(load_checkpoint(dir / "c.bin"), {&a2, &b2});
  EXPECT_EQ(a2.value(), a.value());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsCorruptInputAndShapeMismatch) {
  Parameter<float> a("a", Tensor<float>(2, 2, 1.0f));
  std::string bytes = encode_checkpoint({&a});
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  Parameter<float> wrong("a", Tensor<float>(3, 2));
  EXPECT_THROW(assign_parameters(decode_checkpoint(bytes), {&wrong}), CheckpointError);
}
