#pragma once

#include "ex2/core.hpp"
#include "ex2/rl.hpp"

#include <yaml-cpp/yaml.h>

#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace ex2::envs {

struct Rect {
  double x0, y0, x1, y1;

  bool contains_open(double x, double y) const { return x > x0 && x < x1 && y > y0 && y < y1; }
};

/// Continuous 2-D maze with axis-aligned walls and a sparse goal reward.
/// Observations are the agent's (x, y) position.
class Maze2D : public rl::Mdp {
 public:
  Rect arena{0.0, 0.0, 1.0, 1.0};
  std::vector<Rect> walls;
  std::array<double, 2> start{0.15, 0.15};
  std::array<double, 2> goal{0.85, 0.85};
  double goal_radius = 0.02;
  double step_scale = 0.02;
  int max_steps = 200;

  /// Layout file schema version understood by load_layout.
  static constexpr int kLayoutVersion = 1;

  /// Fixed four-room layout: a cross of walls with one door per wall arm.
  static Maze2D four_rooms() {
    Maze2D m;
    m.walls = {
        {0.48, 0.00, 0.52, 0.20}, {0.48, 0.30, 0.52, 0.70}, {0.48, 0.80, 0.52, 1.00},
        {0.00, 0.48, 0.20, 0.52}, {0.30, 0.48, 0.70, 0.52}, {0.80, 0.48, 1.00, 0.52},
    };
    m.validate();
    return m;
  }

  static Maze2D from_yaml(const YAML::Node& n) {
    const auto fail = [](const std::string& msg) { throw ConfigError("maze layout: " + msg); };
    if (!n.IsMap()) fail("expected a mapping");
    static const std::vector<std::string> known{"version", "arena", "start", "goal", "goal_radius",
                                                "step_scale", "walls"};
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (std::find(known.begin(), known.end(), key) == known.end()) fail("unknown key '" + key + "'");
    }
    if (!n["version"] || n["version"].as<int>() != kLayoutVersion)
      fail("missing or unsupported version (expected " + std::to_string(kLayoutVersion) + ")");
    const auto rect = [&](const YAML::Node& r, const std::string& what) {
      if (!r.IsSequence() || r.size() != 4) fail(what + " must be [x0, y0, x1, y1]");
      return Rect{r[0].as<double>(), r[1].as<double>(), r[2].as<double>(), r[3].as<double>()};
    };
    const auto point = [&](const YAML::Node& p, const std::string& what) {
      if (!p.IsSequence() || p.size() != 2) fail(what + " must be [x, y]");
      return std::array<double, 2>{p[0].as<double>(), p[1].as<double>()};
    };
    Maze2D m;
    try {
      if (n["arena"]) m.arena = rect(n["arena"], "arena");
      if (!n["start"] || !n["goal"]) fail("start and goal are required");
      m.start = point(n["start"], "start");
      m.goal = point(n["goal"], "goal");
      if (n["goal_radius"]) m.goal_radius = n["goal_radius"].as<double>();
      if (n["step_scale"]) m.step_scale = n["step_scale"].as<double>();
      if (n["walls"]) {
        if (!n["walls"].IsSequence()) fail("walls must be a list");
        for (const auto& w : n["walls"]) m.walls.push_back(rect(w, "wall"));
      }
    } catch (const YAML::Exception& e) {
      fail(e.what());
    }
    m.validate();
    return m;
  }

  static Maze2D load_layout(const std::string& path) {
    YAML::Node n;
    try {
      n = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
      throw ConfigError("maze layout " + path + ": " + e.what());
    }
    return from_yaml(n);
  }

  void validate() const {
    if (!(arena.x1 > arena.x0 && arena.y1 > arena.y0)) throw ConfigError("maze: empty arena");
    if (!(goal_radius > 0.0) || !(step_scale > 0.0)) throw ConfigError("maze: radius and step scale must be positive");
    for (const auto& w : walls) {
      if (!(w.x1 > w.x0 && w.y1 > w.y0)) throw ConfigError("maze: degenerate wall");
      if (w.contains_open(start[0], start[1])) throw ConfigError("maze: start lies inside a wall");
      if (w.contains_open(goal[0], goal[1])) throw ConfigError("maze: goal lies inside a wall");
    }
  }

  /// Moves from p by delta, x first then y, stopping at wall faces and the
  /// arena boundary. Motion parallel to a blocking face is kept.
  std::array<double, 2> clip_walls(std::array<double, 2> p, std::array<double, 2> delta) const {
    for (int axis = 0; axis < 2; ++axis) {
      const int other = 1 - axis;
      double target = p[axis] + delta[axis];
      for (const auto& w : walls) {
        const double lo = axis == 0 ? w.x0 : w.y0;
        const double hi = axis == 0 ? w.x1 : w.y1;
        // A wall flush with the arena edge also covers the edge itself.
        const double inf = std::numeric_limits<double>::infinity();
        const double aolo = axis == 0 ? arena.y0 : arena.x0;
        const double aohi = axis == 0 ? arena.y1 : arena.x1;
        double olo = axis == 0 ? w.y0 : w.x0;
        double ohi = axis == 0 ? w.y1 : w.x1;
        if (olo <= aolo) olo = -inf;
        if (ohi >= aohi) ohi = inf;
        if (!(p[other] > olo && p[other] < ohi)) continue;
        if (delta[axis] > 0 && p[axis] <= lo && target > lo) target = lo;
        if (delta[axis] < 0 && p[axis] >= hi && target < hi) target = hi;
      }
      const double alo = axis == 0 ? arena.x0 : arena.y0;
      const double ahi = axis == 0 ? arena.x1 : arena.y1;
      p[axis] = std::clamp(target, alo, ahi);
    }
    return p;
  }

  bool at_goal(double x, double y) const {
    return std::hypot(x - goal[0], y - goal[1]) <= goal_radius;
  }

  Eigen::Index state_dim() const override { return 2; }
  rl::ActionSpec action_spec() const override { return {false, 0, 2, -1.0, 1.0}; }
  int horizon() const override { return max_steps; }

  State reset(Rng&) override {
    State s(2);
    s << start[0], start[1];
    return s;
  }

  rl::StepResult step(const State& s, const Action& a, Rng&) override {
    if (a.value.size() != 2 || !a.value.allFinite()) throw ConfigError("maze: action must be a finite 2-vector");
    const std::array<double, 2> delta{step_scale * std::clamp(a.value[0], -1.0, 1.0),
                                      step_scale * std::clamp(a.value[1], -1.0, 1.0)};
    const auto p = clip_walls({s[0], s[1]}, delta);
    rl::StepResult r;
    r.next = State(2);
    r.next << p[0], p[1];
    r.done = at_goal(p[0], p[1]);
    r.reward = r.done ? 1.0 : 0.0;
    return r;
  }

  std::unique_ptr<rl::Mdp> clone() const override { return std::make_unique<Maze2D>(*this); }
};

/// Chain of n states with one-hot observations. Actions: 0 left, 1 right.
/// The intended move happens with probability 1 - slip, the opposite move
/// otherwise; boundary states self-loop on outward moves. Reward 1 on
/// arriving at (or staying in) the last state. Episodes end at the horizon.
class ChainMdp : public rl::Mdp {
 public:
  int n_states = 20;
  double slip = 0.1;
  int max_steps = 50;

  ChainMdp() = default;
  ChainMdp(int n, double slip_prob, int horizon) : n_states(n), slip(slip_prob), max_steps(horizon) {
    if (n < 2) throw ConfigError("chain: need at least 2 states");
    if (!(slip >= 0.0 && slip <= 1.0)) throw ConfigError("chain: slip must lie in [0, 1]");
  }

  State one_hot(int k) const {
    State s = State::Zero(n_states);
    s[k] = 1.0;
    return s;
  }

  static int index_of(const State& s) {
    Eigen::Index k;
    s.maxCoeff(&k);
    return static_cast<int>(k);
  }

  int move(int k, int action, bool slipped) const {
    int dir = action == 1 ? 1 : -1;
    if (slipped) dir = -dir;
    return std::clamp(k + dir, 0, n_states - 1);
  }

  /// Row-stochastic transition matrix under a policy choosing "right" with
  /// probability p_right in every state.
  Eigen::MatrixXd transition_matrix(double p_right = 0.5) const {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n_states, n_states);
    for (int k = 0; k < n_states; ++k) {
      t(k, move(k, 1, false)) += p_right * (1.0 - slip);
      t(k, move(k, 1, true)) += p_right * slip;
      t(k, move(k, 0, false)) += (1.0 - p_right) * (1.0 - slip);
      t(k, move(k, 0, true)) += (1.0 - p_right) * slip;
    }
    return t;
  }

  Eigen::Index state_dim() const override { return n_states; }
  rl::ActionSpec action_spec() const override { return {true, 2, 0, 0.0, 0.0}; }
  int horizon() const override { return max_steps; }
  State reset(Rng&) override { return one_hot(0); }

  rl::StepResult step(const State& s, const Action& a, Rng& rng) override {
    if (a.index < 0 || a.index > 1) throw ConfigError("chain: action must be 0 or 1");
    const bool slipped = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < slip;
    const int next = move(index_of(s), a.index, slipped);
    return {one_hot(next), next == n_states - 1 ? 1.0 : 0.0, false};
  }

  std::unique_ptr<rl::Mdp> clone() const override { return std::make_unique<ChainMdp>(*this); }
};

/// Exact visit counts per chain state over a collection of states.
template <class Pool>
std::vector<long> chain_visit_counts(const Pool& states, int n_states) {
  std::vector<long> c(static_cast<std::size_t>(n_states), 0);
  for (std::size_t i = 0; i < states.size(); ++i) ++c[static_cast<std::size_t>(ChainMdp::index_of(states[i]))];
  return c;
}

/// One-state, one-step bandit with deterministic arm rewards.
class Bandit : public rl::Mdp {
 public:
  std::vector<double> arm_rewards{1.0, 0.0};

  Bandit() = default;
  explicit Bandit(std::vector<double> rewards) : arm_rewards(std::move(rewards)) {
    if (arm_rewards.size() < 2) throw ConfigError("bandit: need at least 2 arms");
  }

  Eigen::Index state_dim() const override { return 1; }
  rl::ActionSpec action_spec() const override { return {true, static_cast<int>(arm_rewards.size()), 0, 0, 0}; }
  int horizon() const override { return 1; }
  State reset(Rng&) override { return State::Ones(1); }
  rl::StepResult step(const State& s, const Action& a, Rng&) override {
    if (a.index < 0 || a.index >= static_cast<int>(arm_rewards.size())) throw ConfigError("bandit: bad arm");
    return {s, arm_rewards[static_cast<std::size_t>(a.index)], true};
  }
  std::unique_ptr<rl::Mdp> clone() const override { return std::make_unique<Bandit>(*this); }
};

// ---------------------------------------------------------------------------
// Toy 2-D datasets

enum class ToyKind { two_moons, ring, gaussian_mixture };

struct MixtureComponent {
  double weight;
  std::array<double, 2> mean;
  double sigma;
};

/// Default mixture: three isotropic components.
inline std::vector<MixtureComponent> default_mixture() {
  return {{0.3, {-1.0, 0.0}, 0.2}, {0.3, {1.0, 0.0}, 0.2}, {0.4, {0.0, 1.2}, 0.3}};
}

struct ToyDataset2D {
  ToyKind kind = ToyKind::two_moons;
  int n_points = 500;
  std::uint64_t seed = 0;
  double noise = 0.05;  // two_moons / ring jitter
  std::vector<MixtureComponent> components = default_mixture();

  /// Analytic density of the gaussian_mixture generator.
  double mixture_pdf(const State& x) const {
    double p = 0.0;
    for (const auto& c : components) {
      const double d2 = std::pow(x[0] - c.mean[0], 2) + std::pow(x[1] - c.mean[1], 2);
      p += c.weight * std::exp(-0.5 * d2 / (c.sigma * c.sigma)) / (2.0 * std::numbers::pi * c.sigma * c.sigma);
    }
    return p;
  }
};

inline std::vector<State> toy_sample(const ToyDataset2D& spec) {
  if (spec.n_points < 1) throw ConfigError("toy dataset: n_points must be at least 1");
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::vector<State> pts;
  pts.reserve(static_cast<std::size_t>(spec.n_points));
  for (int i = 0; i < spec.n_points; ++i) {
    State p(2);
    switch (spec.kind) {
      case ToyKind::two_moons: {
        const double t = std::numbers::pi * u(rng);
        if (i % 2 == 0)
          p << std::cos(t), std::sin(t);
        else
          p << 1.0 - std::cos(t), 0.5 - std::sin(t);
        p[0] += spec.noise * nrm(rng);
        p[1] += spec.noise * nrm(rng);
        break;
      }
      case ToyKind::ring: {
        const double t = 2.0 * std::numbers::pi * u(rng);
        p << std::cos(t), std::sin(t);
        p[0] += spec.noise * nrm(rng);
        p[1] += spec.noise * nrm(rng);
        break;
      }
      case ToyKind::gaussian_mixture: {
        if (spec.components.empty()) throw ConfigError("toy dataset: mixture needs components");
        double r = u(rng), acc = 0.0;
        const MixtureComponent* c = &spec.components.back();
        for (const auto& comp : spec.components) {
          acc += comp.weight;
          if (r < acc) {
            c = &comp;
            break;
          }
        }
        p << c->mean[0] + c->sigma * nrm(rng), c->mean[1] + c->sigma * nrm(rng);
        break;
      }
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace ex2::envs
