#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "zg/engine.hpp"

using namespace zg;

namespace {

ArchSpec arch(ArchKind kind, std::size_t c, std::size_t h, std::size_t w, std::size_t k = 10) {
  ArchSpec a;
  a.kind = kind;
  a.input = {c, h, w};
  a.num_classes = k;
  return a;
}

class EngineShapes : public ::testing::TestWithParam<ArchSpec> {};

TEST_P(EngineShapes, LogitsAndLossMatchReference) {
  const ArchSpec a = GetParam();
  std::mt19937_64 gen(7);
  ParamSet p = init_params(a, 11);
  for (auto& g : p.groups) {
    for (double& v : g.value.data()) v += 0.01;
  }
  const std::size_t batch = 19;  // crosses an internal chunk boundary
  const Tensor x = zgt::random_images(gen, {batch, a.input.channels, a.input.height, a.input.width});
  const auto y = zgt::random_labels(gen, batch, a.num_classes);
  const auto ref = zgt::reference(a, zgt::to_ld(p), zgt::to_ld(x), batch, y);
  const Tensor logits = forward(a, p, x);
  ASSERT_EQ(logits.shape(), (Shape{batch, a.num_classes}));
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    EXPECT_NEAR(logits[i], static_cast<double>(ref.logits[i]), 1e-12 * (1.0 + std::abs(static_cast<double>(ref.logits[i]))));
  }
  const LossGrad lg = loss_and_grads(a, p, x, y, GradRequest{});
  EXPECT_NEAR(lg.loss, static_cast<double>(ref.loss), 1e-12);
  ASSERT_EQ(lg.sample_loss.size(), batch);
  double mean = 0.0;
  for (double l : lg.sample_loss) mean += l / static_cast<double>(batch);
  EXPECT_NEAR(mean, lg.loss, 1e-14);
  EXPECT_FALSE(lg.param_grad.has_value());
  EXPECT_EQ(lg.input_grad.numel(), 0u);
}

TEST_P(EngineShapes, GradientsMatchCentralDifferences) {
  const zgt::GradCheckStats st = zgt::check_gradients(GetParam(), 2024, {.batch = 2, .per_group = 12, .input_coords = 24});
  EXPECT_EQ(st.failed, 0u) << st.first_failure;
  EXPECT_GT(st.checked, 60u);
  EXPECT_LE(st.kinked * 20, st.checked);
}

INSTANTIATE_TEST_SUITE_P(Shapes, EngineShapes,
                         ::testing::Values(arch(ArchKind::mlp_small, 1, 8, 8, 8), arch(ArchKind::mlp_small, 1, 28, 28),
                                           arch(ArchKind::cnn_small, 1, 8, 8, 8), arch(ArchKind::cnn_small, 2, 9, 7, 3),
                                           arch(ArchKind::cnn_small, 1, 28, 28), arch(ArchKind::cnn_small, 3, 32, 32)));

TEST(Engine, LayoutSizes) {
  const auto mlp = param_layout(arch(ArchKind::mlp_small, 1, 28, 28));
  EXPECT_EQ(mlp[0].shape, (Shape{256, 784}));
  EXPECT_EQ(mlp[4].shape, (Shape{10, 256}));
  const auto cnn = param_layout(arch(ArchKind::cnn_small, 1, 28, 28));
  EXPECT_EQ(cnn[0].shape, (Shape{16, 1, 3, 3}));
  EXPECT_EQ(cnn[2].shape, (Shape{32, 16, 3, 3}));
  EXPECT_EQ(cnn[4].shape, (Shape{10, 32 * 14 * 14}));
  EXPECT_EQ(param_layout(arch(ArchKind::cnn_small, 1, 8, 8))[4].shape, (Shape{10, 32 * 4 * 4}));
}

TEST(Engine, LinearNetworkGradientsHaveNoKinks) {
  ArchSpec a = arch(ArchKind::cnn_small, 1, 6, 6, 4);
  a.identity_activation = true;
  const auto st = zgt::check_gradients(a, 5, {.batch = 2, .per_group = 10, .input_coords = 20});
  EXPECT_EQ(st.kinked, 0u);
  EXPECT_EQ(st.failed, 0u) << st.first_failure;
}

TEST(Engine, ReluDerivativeAtZeroIsZero) {
  // fc1 all zero: every hidden pre-activation is exactly 0, so nothing flows below it.
  const ArchSpec a = arch(ArchKind::mlp_small, 1, 4, 4, 3);
  ParamSet p = init_params(a, 3);
  for (double& v : p[0].data()) v = 0.0;
  for (double& v : p[1].data()) v = 0.0;
  std::mt19937_64 gen(1);
  const Tensor x = zgt::random_images(gen, {4, 1, 4, 4});
  const LossGrad lg = loss_and_grads(a, p, x, std::vector<int>{0, 1, 2, 0}, GradRequest{true, true});
  for (double g : lg.input_grad.data()) EXPECT_EQ(g, 0.0);
  for (double g : (*lg.param_grad)[0].data()) EXPECT_EQ(g, 0.0);
  for (double g : (*lg.param_grad)[1].data()) EXPECT_EQ(g, 0.0);
}

TEST(Engine, UniformLogitsGiveLogKLoss) {
  const ArchSpec a = arch(ArchKind::cnn_small, 1, 8, 8, 5);
  ParamSet p = zeros_like(a);
  std::mt19937_64 gen(2);
  const Tensor x = zgt::random_images(gen, {3, 1, 8, 8});
  const LossGrad lg = loss_and_grads(a, p, x, std::vector<int>{0, 4, 2}, GradRequest{true, false});
  EXPECT_DOUBLE_EQ(lg.loss, std::log(5.0));
  // Only the output bias sees a gradient: softmax 1/5 minus the label frequency.
  EXPECT_NEAR((*lg.param_grad)[5][0], 0.2 - 1.0 / 3.0, 1e-15);
  EXPECT_NEAR((*lg.param_grad)[5][1], 0.2, 1e-15);
}

TEST(Engine, DeterministicAcrossCalls) {
  const ArchSpec a = arch(ArchKind::cnn_small, 1, 12, 12);
  const ParamSet p = init_params(a, 9);
  std::mt19937_64 gen(3);
  const Tensor x = zgt::random_images(gen, {37, 1, 12, 12});
  const auto y = zgt::random_labels(gen, 37, 10);
  const LossGrad one = loss_and_grads(a, p, x, y, GradRequest{true, true});
  const LossGrad two = loss_and_grads(a, p, x, y, GradRequest{true, true});
  EXPECT_EQ(one.loss, two.loss);
  EXPECT_TRUE(one.input_grad == two.input_grad);
  EXPECT_TRUE(*one.param_grad == *two.param_grad);
}

TEST(Engine, InitIsSeededHeNormal) {
  const ArchSpec a = arch(ArchKind::mlp_small, 1, 28, 28);
  const ParamSet p = init_params(a, 1);
  EXPECT_TRUE(p == init_params(a, 1));
  EXPECT_FALSE(p == init_params(a, 2));
  double sq = 0.0;
  for (double v : p[0].data()) sq += v * v;
  EXPECT_NEAR(sq / static_cast<double>(p[0].numel()), 2.0 / 784.0, 0.05 * 2.0 / 784.0);
  for (double v : p[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(Engine, RejectsBadInputs) {
  const ArchSpec a = arch(ArchKind::cnn_small, 1, 8, 8, 4);
  const ParamSet p = init_params(a, 1);
  EXPECT_THROW(forward(a, p, Tensor({2, 1, 8, 9})), std::invalid_argument);
  EXPECT_THROW(loss_and_grads(a, p, Tensor({2, 1, 8, 8}), std::vector<int>{0, 4}, GradRequest{}), std::out_of_range);
  EXPECT_THROW(loss_and_grads(a, p, Tensor({2, 1, 8, 8}), std::vector<int>{0}, GradRequest{}), std::invalid_argument);
  EXPECT_THROW(forward(arch(ArchKind::mlp_small, 1, 8, 8, 4), p, Tensor({1, 1, 8, 8})), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 0}), std::invalid_argument);
}

}  // namespace
