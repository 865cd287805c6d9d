#include "ex2/replay_buffer.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <deque>

using namespace ex2;

namespace {

State s(double v) { return State::Constant(1, v); }

std::vector<double> contents(const ReplayBuffer& b) {
  std::vector<double> out;
  for (const auto& x : b) out.push_back(x[0]);
  return out;
}

}  // namespace

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer b(3);
  for (double v : {1.0, 2.0, 3.0, 4.0}) b.push(s(v));
  EXPECT_EQ(contents(b), (std::vector<double>{2, 3, 4}));
  EXPECT_EQ(b.total_pushed(), 4);
}

TEST(ReplayBuffer, EmptyPushIsNoop) {
  ReplayBuffer b(3);
  b.push(s(1));
  b.push_trajectories(std::vector<Trajectory>{});
  EXPECT_EQ(contents(b), (std::vector<double>{1}));
}

TEST(ReplayBuffer, TrajectoriesKeepOrder) {
  std::vector<Trajectory> ts(2);
  for (int i = 0; i < 5; ++i) {
    ts[0].states.push_back(s(i));
    ts[1].states.push_back(s(10 + i));
  }
  ReplayBuffer b(100);
  b.push_trajectories(ts);
  EXPECT_EQ(contents(b), (std::vector<double>{0, 1, 2, 3, 4, 10, 11, 12, 13, 14}));
}

TEST(ReplayBuffer, MatchesDequeModel) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cap = 1 + uniform_index(rng, 20);
    ReplayBuffer b(cap);
    std::deque<double> model;
    const std::size_t ops = uniform_index(rng, 200);
    for (std::size_t i = 0; i < ops; ++i) {
      const double v = static_cast<double>(i);
      b.push(s(v));
      model.push_back(v);
      if (model.size() > cap) model.pop_front();
      ASSERT_EQ(contents(b), std::vector<double>(model.begin(), model.end()));
    }
  }
}

TEST(ReplayBuffer, Validation) {
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
  ReplayBuffer b(3);
  b.push(s(1));
  EXPECT_THROW(b.push(State::Zero(2)), ConfigError);
  EXPECT_THROW(ReplayBuffer(3).sample(1, 0), EmptyInputError);
}

TEST(SampleNegatives, SingleStateRepeats) {
  ReplayBuffer b(10);
  b.push(s(7));
  const auto out = sample_negatives(b, 5, 1);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& x : out) EXPECT_EQ(x[0], 7.0);
}

TEST(SampleNegatives, Deterministic) {
  ReplayBuffer b(10);
  for (int i = 0; i < 10; ++i) b.push(s(i));
  EXPECT_EQ(sample_negatives(b, 20, 3), sample_negatives(b, 20, 3));
  EXPECT_NE(sample_negatives(b, 20, 3), sample_negatives(b, 20, 4));
}

TEST(SampleNegatives, ChiSquaredUniform) {
  ReplayBuffer b(10);
  for (int i = 0; i < 10; ++i) b.push(s(i));
  const int n = 100000;
  std::vector<double> counts(10, 0.0);
  for (const auto& x : sample_negatives(b, n, 42)) counts[static_cast<std::size_t>(x[0])] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  const boost::math::chi_squared dist(9);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}
