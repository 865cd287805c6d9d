#include "ex2/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ex2;
using namespace ex2::nn;

namespace {

Mlp one_layer(double w, double b, Activation a) {
  Layer l;
  l.weight = Eigen::MatrixXd::Constant(1, 1, w);
  l.bias = Eigen::VectorXd::Constant(1, b);
  l.activation = a;
  return Mlp({l});
}

Mlp random_net(std::uint64_t seed, Eigen::Index in = 3, Eigen::Index out = 2) {
  Rng rng(seed);
  auto net = Mlp::make(in, {5, 4}, out, Activation::tanh, Activation::linear, rng);
  for (auto& l : net.layers) l.bias = standard_normal(rng, l.bias.size()) * 0.3;
  return net;
}

}  // namespace

TEST(Forward, ZeroLinearNetGivesZero) {
  Layer l;
  l.weight = Eigen::MatrixXd::Zero(3, 2);
  l.bias = Eigen::VectorXd::Zero(3);
  l.activation = Activation::linear;
  const Mlp net({l});
  EXPECT_TRUE(net.forward(Eigen::VectorXd(Eigen::VectorXd::Constant(2, 7.5))).isZero());
}

TEST(Forward, TanhOfZero) {
  EXPECT_EQ(one_layer(1.0, 0.0, Activation::tanh).forward(Eigen::VectorXd(Eigen::VectorXd::Zero(1)))[0], 0.0);
}

TEST(Forward, ReluNegativeBranch) {
  EXPECT_EQ(one_layer(2.0, 1.0, Activation::relu).forward(Eigen::VectorXd(Eigen::VectorXd::Constant(1, -3.0)))[0], 0.0);
}

TEST(Forward, RejectsWrongInputSize) {
  const auto net = random_net(1);
  EXPECT_THROW(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(4))), ConfigError);
}

TEST(Backward, LinearByHand) {
  const auto net = one_layer(3.0, 0.0, Activation::linear);
  Tape tape;
  net.forward(Eigen::MatrixXd::Constant(1, 1, 2.0), tape);
  Eigen::MatrixXd din;
  const auto g = net.backward(tape, Eigen::MatrixXd::Ones(1, 1), &din);
  EXPECT_DOUBLE_EQ(g.weight[0](0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.bias[0][0], 1.0);
  EXPECT_DOUBLE_EQ(din(0, 0), 3.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  const auto net = random_net(2);
  Tape tape;
  Rng rng(5);
  net.forward(standard_normal(rng, 3, 4), tape);
  for (double v : flatten(net.backward(tape, Eigen::MatrixXd::Zero(2, 4)))) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto net = random_net(seed);
    Rng rng(seed + 100);
    const Eigen::MatrixXd x = standard_normal(rng, 3, 6);
    const Eigen::MatrixXd w = standard_normal(rng, 2, 6);
    const double err = grad_check(
        [&](const Mlp& n) {
          Tape tape;
          const Eigen::MatrixXd y = n.forward(x, tape);
          return std::make_pair((y.array() * w.array()).sum(), n.backward(tape, w));
        },
        net);
    EXPECT_LE(err, 1e-4) << "seed " << seed;
  }
}

TEST(Bce, SymmetricPoint) {
  const auto r = bce_from_logit(0.0, 0.5);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.dlogit, 0.0, 1e-15);
}

TEST(Bce, SaturatedCorrect) { EXPECT_LT(bce_from_logit(50.0, 1.0).loss, 1e-20); }

TEST(Bce, ClosedForm) {
  const auto r = bce_from_logit(1.0, 0.0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(1.0)), 1e-12);
  EXPECT_NEAR(r.loss, 1.3133, 1e-4);
  EXPECT_NEAR(r.dlogit, 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Bce, ArraysAgreeWithScalar) {
  Eigen::ArrayXXd logits(1, 5);
  logits << -40.0, -1.5, 0.0, 2.0, 35.0;
  for (double label : {0.0, 1.0}) {
    const auto a = bce_from_logits(logits, label);
    for (Eigen::Index i = 0; i < 5; ++i) {
      const auto s = bce_from_logit(logits(0, i), label);
      EXPECT_NEAR(a.loss(0, i), s.loss, 1e-14);
      EXPECT_NEAR(a.dlogit(0, i), s.dlogit, 1e-14);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto net = random_net(3);
  const auto before = net.flatten();
  AdamState st(net);
  adam_step(net, net.zero_grad(), st, 1e-3, 1e-3);
  EXPECT_EQ(net.flatten(), before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
  auto net = one_layer(0.5, 0.0, Activation::linear);
  AdamState st(net);
  auto g = net.zero_grad();
  g.weight[0](0, 0) = 1.0;
  adam_step(net, g, st, 1e-3, 1e-3);
  EXPECT_NEAR(net.layers[0].weight(0, 0) - 0.5, -1e-3, 1e-10);
}

TEST(Adam, GroupsUseTheirRates) {
  Rng rng(4);
  auto net = Mlp::make(1, {1}, 1, Activation::linear, Activation::linear, rng);
  ASSERT_EQ(net.layers[0].group, LrGroup::shared);
  ASSERT_EQ(net.layers[1].group, LrGroup::head);
  const double w0 = net.layers[0].weight(0, 0), w1 = net.layers[1].weight(0, 0);
  AdamState st(net);
  auto g = net.zero_grad();
  g.weight[0](0, 0) = 1.0;
  g.weight[1](0, 0) = 1.0;
  adam_step(net, g, st, 1e-3, 1e-2);
  EXPECT_NEAR(net.layers[0].weight(0, 0) - w0, -1e-3, 1e-10);
  EXPECT_NEAR(net.layers[1].weight(0, 0) - w1, -1e-2, 1e-9);
}

TEST(Adam, NonFiniteGradientThrows) {
  auto net = random_net(6);
  AdamState st(net);
  auto g = net.zero_grad();
  g.weight[0](0, 0) = std::nan("");
  EXPECT_THROW(adam_step(net, g, st, 1e-3, 1e-3), TrainingError);
}

TEST(GradCheck, QuadraticIsExact) {
  std::vector<double> p{0.3, -1.2, 2.5, 4.0};
  std::vector<double> g;
  for (double v : p) g.push_back(2.0 * v);
  const double err = grad_check(
      [](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
      },
      p, g);
  EXPECT_LE(err, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  std::vector<double> p{1.0, 2.0};
  std::vector<double> g{2.0, 5.0};
  const double err = grad_check([](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }, p, g);
  EXPECT_GT(err, 0.1);
}

TEST(Flatten, RoundTrip) {
  auto net = random_net(7);
  auto flat = net.flatten();
  for (double& v : flat) v += 1.0;
  net.unflatten(flat);
  EXPECT_EQ(net.flatten(), flat);
}
