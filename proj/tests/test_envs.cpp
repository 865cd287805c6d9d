#include "ex2/envs.hpp"
#include "ex2/rl.hpp"

#include <gtest/gtest.h>
#include <yaml-cpp/yaml.h>

#include <filesystem>

using namespace ex2;
using envs::ChainMdp;
using envs::Maze2D;

namespace {

State pos(double x, double y) {
  State s(2);
  s << x, y;
  return s;
}

Action move(double ax, double ay) {
  Eigen::VectorXd v(2);
  v << ax, ay;
  return Action::continuous(v);
}

}  // namespace

TEST(Maze, ZeroActionStays) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  const auto r = m.step(pos(0.3, 0.3), move(0, 0), rng);
  EXPECT_EQ(r.next, pos(0.3, 0.3));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
}

TEST(Maze, SlidesAlongWall) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  // Just left of the central vertical wall, pushing right and up.
  const auto r = m.step(pos(0.47, 0.4), move(1, 1), rng);
  EXPECT_DOUBLE_EQ(r.next[0], 0.48);
  EXPECT_DOUBLE_EQ(r.next[1], 0.42);
}

TEST(Maze, PassesThroughDoor) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  const auto r = m.step(pos(0.47, 0.25), move(1, 0), rng);
  EXPECT_NEAR(r.next[0], 0.49, 1e-15);
}

TEST(Maze, WallFlushWithArenaEdgeBlocksAtEdge) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  // The lower wall arm touches y = 0; an agent on the edge cannot slip under it.
  const auto r = m.step(pos(0.47, 0.0), move(1, 0), rng);
  EXPECT_DOUBLE_EQ(r.next[0], 0.48);
}

TEST(Maze, ArenaClamps) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  const auto r = m.step(pos(0.005, 0.3), move(-1, 0), rng);
  EXPECT_DOUBLE_EQ(r.next[0], 0.0);
}

TEST(Maze, GoalRewardAndDone) {
  auto m = Maze2D::four_rooms();
  m.step_scale = 0.01;
  Rng rng(1);
  for (const auto& a : {move(0, 0), move(1, -1), move(-0.3, 0.7)}) {
    const auto r = m.step(pos(0.85, 0.85), a, rng);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_TRUE(r.done);
  }
}

TEST(Maze, ActionsClipped) {
  auto m = Maze2D::four_rooms();
  Rng rng(1);
  const auto r = m.step(pos(0.3, 0.3), move(50, 0), rng);
  EXPECT_NEAR(r.next[0], 0.32, 1e-15);
  EXPECT_THROW(m.step(pos(0.3, 0.3), move(std::nan(""), 0), rng), ConfigError);
}

TEST(Maze, LayoutFileMatchesBuiltin) {
  const auto path = std::filesystem::path(EX2_CONFIG_DIR) / "four_rooms.yaml";
  const auto a = Maze2D::load_layout(path.string());
  const auto b = Maze2D::four_rooms();
  ASSERT_EQ(a.walls.size(), b.walls.size());
  for (std::size_t i = 0; i < a.walls.size(); ++i) {
    EXPECT_EQ(a.walls[i].x0, b.walls[i].x0);
    EXPECT_EQ(a.walls[i].y1, b.walls[i].y1);
  }
  EXPECT_EQ(a.goal, b.goal);
  EXPECT_EQ(a.goal_radius, b.goal_radius);
}

TEST(Maze, LayoutValidation) {
  EXPECT_THROW(Maze2D::from_yaml(YAML::Load("{version: 2, start: [0, 0], goal: [1, 1]}")), ConfigError);
  EXPECT_THROW(Maze2D::from_yaml(YAML::Load("{version: 1, start: [0, 0], goal: [1, 1], door: 3}")), ConfigError);
  EXPECT_THROW(Maze2D::from_yaml(YAML::Load("{version: 1, start: [0.5, 0.5], goal: [1, 1], walls: [[0.4, 0.4, 0.6, 0.6]]}")),
               ConfigError);
  EXPECT_THROW(Maze2D::from_yaml(YAML::Load("{version: 1, goal: [1, 1]}")), ConfigError);
  EXPECT_THROW(Maze2D::load_layout("/nonexistent/layout.yaml"), ConfigError);
}

TEST(Chain, DeterministicMoves) {
  ChainMdp c(5, 0.0, 10);
  Rng rng(1);
  EXPECT_EQ(ChainMdp::index_of(c.step(c.one_hot(2), Action::discrete(1), rng).next), 3);
  EXPECT_EQ(ChainMdp::index_of(c.step(c.one_hot(0), Action::discrete(0), rng).next), 0);
  const auto r = c.step(c.one_hot(3), Action::discrete(1), rng);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_FALSE(r.done);
}

TEST(Chain, SlipFrequency) {
  ChainMdp c(5, 0.1, 10);
  Rng rng(7);
  int slips = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    if (ChainMdp::index_of(c.step(c.one_hot(2), Action::discrete(1), rng).next) == 1) ++slips;
  EXPECT_NEAR(static_cast<double>(slips) / n, 0.1, 0.005);
}

TEST(Chain, TransitionMatrixRowsSumToOne) {
  ChainMdp c(6, 0.2, 10);
  const auto t = c.transition_matrix(0.3);
  for (Eigen::Index r = 0; r < t.rows(); ++r) EXPECT_NEAR(t.row(r).sum(), 1.0, 1e-15);
}

TEST(Chain, OccupancyMatchesMarkovChain) {
  ChainMdp c(20, 0.1, 50);
  auto policy = rl::Policy::make(20, c.action_spec(), {}, 0.0, 0.0, 1);
  for (auto& l : policy.net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  std::vector<double> visits(20, 0.0);
  const int episodes = 10000;
  for (int e = 0; e < episodes; ++e)
    for (const auto& s : rl::rollout(policy, c, derive_seed(3, Stream::rollout, static_cast<std::uint64_t>(e))).states)
      visits[static_cast<std::size_t>(ChainMdp::index_of(s))] += 1.0;

  const Eigen::MatrixXd t = c.transition_matrix(0.5);
  Eigen::RowVectorXd dist = Eigen::RowVectorXd::Zero(20);
  dist[0] = 1.0;
  Eigen::RowVectorXd occ = Eigen::RowVectorXd::Zero(20);
  for (int k = 0; k < 50; ++k) {
    occ += dist;
    dist = dist * t;
  }
  occ /= 50.0;
  double tv = 0.0;
  for (int k = 0; k < 20; ++k) tv += std::abs(visits[static_cast<std::size_t>(k)] / (episodes * 50.0) - occ[k]);
  EXPECT_LE(0.5 * tv, 0.02);
}

TEST(Chain, Validation) {
  EXPECT_THROW(ChainMdp(1, 0.1, 10), ConfigError);
  EXPECT_THROW(ChainMdp(5, 1.5, 10), ConfigError);
  ChainMdp c(5, 0.0, 10);
  Rng rng(1);
  EXPECT_THROW(c.step(c.one_hot(0), Action::discrete(2), rng), ConfigError);
}

TEST(Bandit, ArmRewards) {
  envs::Bandit b({0.0, 2.5, 1.0});
  Rng rng(1);
  const auto r = b.step(State::Ones(1), Action::discrete(1), rng);
  EXPECT_EQ(r.reward, 2.5);
  EXPECT_TRUE(r.done);
  EXPECT_THROW(envs::Bandit({1.0}), ConfigError);
}

TEST(Toy, SingleDeterministicPoint) {
  envs::ToyDataset2D spec;
  spec.n_points = 1;
  spec.seed = 4;
  const auto a = envs::toy_sample(spec);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a, envs::toy_sample(spec));
}

TEST(Toy, SameSeedSameCloud) {
  for (auto kind : {envs::ToyKind::two_moons, envs::ToyKind::ring, envs::ToyKind::gaussian_mixture}) {
    envs::ToyDataset2D spec;
    spec.kind = kind;
    spec.seed = 9;
    EXPECT_EQ(envs::toy_sample(spec), envs::toy_sample(spec));
    auto other = spec;
    other.seed = 10;
    EXPECT_NE(envs::toy_sample(spec), envs::toy_sample(other));
  }
}

TEST(Toy, MixtureMeanWithinClt) {
  envs::ToyDataset2D spec;
  spec.kind = envs::ToyKind::gaussian_mixture;
  spec.components = {{1.0, {0.0, 0.0}, 0.1}};
  spec.n_points = 10000;
  spec.seed = 2;
  State mean = State::Zero(2);
  for (const auto& p : envs::toy_sample(spec)) mean += p;
  mean /= spec.n_points;
  const double bound = 3.0 * 0.1 / std::sqrt(static_cast<double>(spec.n_points));
  EXPECT_LE(std::abs(mean[0]), bound);
  EXPECT_LE(std::abs(mean[1]), bound);
}

TEST(Toy, MixturePdfIntegratesToOne) {
  envs::ToyDataset2D spec;
  const double h = 0.02;
  double mass = 0.0;
  State x(2);
  for (double a = -3.0; a < 3.0; a += h)
    for (double b = -2.0; b < 3.5; b += h) {
      x << a + h / 2, b + h / 2;
      mass += spec.mixture_pdf(x) * h * h;
    }
  EXPECT_NEAR(mass, 1.0, 1e-3);
}

TEST(Toy, RejectsEmpty) {
  envs::ToyDataset2D spec;
  spec.n_points = 0;
  EXPECT_THROW(envs::toy_sample(spec), ConfigError);
}
