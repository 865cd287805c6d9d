#pragma once

#include "ex2/core.hpp"
#include "ex2/nn.hpp"
#include "ex2/trajectory.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace ex2::rl {

struct ActionSpec {
  bool discrete = true;
  int n = 2;              // discrete action count
  int dim = 0;            // continuous action dimension
  double low = -1.0, high = 1.0;
};

struct StepResult {
  State next;
  double reward = 0.0;
  bool done = false;
};

/// Episodic MDP. Implementations are plain state machines: all randomness
/// comes through the generator passed to reset/step.
class Mdp {
 public:
  virtual ~Mdp() = default;
  virtual Eigen::Index state_dim() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual int horizon() const = 0;
  virtual State reset(Rng& rng) = 0;
  virtual StepResult step(const State& s, const Action& a, Rng& rng) = 0;
  virtual std::unique_ptr<Mdp> clone() const = 0;
};

enum class HeadKind { categorical, diagonal_gaussian };

struct Policy {
  nn::Mlp net;
  HeadKind head = HeadKind::categorical;
  Eigen::VectorXd log_std;  // diagonal_gaussian only
  double entropy_bonus = 0.0;

  static Policy make(Eigen::Index state_dim, const ActionSpec& spec, std::vector<int> hidden,
                     double init_log_std, double entropy_bonus, std::uint64_t seed) {
    Rng rng(derive_seed(seed, Stream::policy_init));
    Policy p;
    p.entropy_bonus = entropy_bonus;
    if (spec.discrete) {
      if (spec.n < 2) throw ConfigError("categorical policy needs at least 2 actions");
      p.head = HeadKind::categorical;
      p.net = nn::Mlp::make(state_dim, hidden, spec.n, nn::Activation::relu, nn::Activation::linear, rng);
    } else {
      if (spec.dim < 1) throw ConfigError("gaussian policy needs a positive action dimension");
      p.head = HeadKind::diagonal_gaussian;
      p.net = nn::Mlp::make(state_dim, hidden, spec.dim, nn::Activation::relu, nn::Activation::linear, rng);
      p.log_std = Eigen::VectorXd::Constant(spec.dim, init_log_std);
    }
    return p;
  }
};

inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  return log_softmax(logits).array().exp().matrix();
}

inline double categorical_entropy(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd lp = log_softmax(logits);
  return -(lp.array().exp() * lp.array()).sum();
}

inline double gaussian_log_density(const Eigen::VectorXd& a, const Eigen::VectorXd& mean,
                                   const Eigen::VectorXd& log_std) {
  const Eigen::ArrayXd z = (a - mean).array() / log_std.array().exp();
  return (-0.5 * z.square() - log_std.array() - 0.5 * std::log(2.0 * std::numbers::pi)).sum();
}

inline double log_prob(const Policy& p, const State& s, const Action& a) {
  const Eigen::VectorXd out = p.net.forward(s);
  if (p.head == HeadKind::categorical) return log_softmax(out)[a.index];
  return gaussian_log_density(a.value, out, p.log_std);
}

inline Action sample_action(const Policy& p, const State& s, Rng& rng) {
  const Eigen::VectorXd out = p.net.forward(s);
  if (p.head == HeadKind::categorical) {
    const Eigen::VectorXd probs = softmax(out);
    std::discrete_distribution<int> dist(probs.data(), probs.data() + probs.size());
    return Action::discrete(dist(rng));
  }
  return Action::continuous(out + (p.log_std.array().exp() * standard_normal(rng, out.size()).array()).matrix());
}

/// Simulates one episode until done or the horizon.
inline Trajectory rollout(const Policy& policy, Mdp& mdp, std::uint64_t seed) {
  Rng rng(seed);
  Trajectory t;
  State s = mdp.reset(rng);
  for (int k = 0; k < mdp.horizon(); ++k) {
    Action a = sample_action(policy, s, rng);
    StepResult r;
    try {
      r = mdp.step(s, a, rng);
    } catch (const EnvError&) {
      throw;
    } catch (const std::exception& e) {
      throw EnvError(e.what(), k);
    }
    if (!std::isfinite(r.reward)) throw EnvError("non-finite reward", k);
    t.states.push_back(s);
    t.actions.push_back(std::move(a));
    t.raw_rewards.push_back(r.reward);
    t.aug_rewards.push_back(r.reward);
    s = std::move(r.next);
    if (r.done) {
      t.terminal = true;
      break;
    }
  }
  return t;
}

/// Discounted return-to-go over the augmented rewards.
inline std::vector<double> returns(const Trajectory& t, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  std::vector<double> g(t.aug_rewards.size());
  double acc = 0.0;
  for (std::size_t i = g.size(); i-- > 0;) {
    acc = t.aug_rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

struct SurrogateGrad {
  double value = 0.0;
  double entropy = 0.0;
  nn::MlpGrad net;
  Eigen::VectorXd log_std;
};

/// Gradient of the surrogate
///   J = (1/N) sum_i [ A_i log pi(a_i|s_i) + c H(pi(.|s_i)) ]
/// over N state-action pairs with fixed advantages.
inline SurrogateGrad surrogate(const Policy& p, const Eigen::MatrixXd& states,
                               std::span<const Action> actions, std::span<const double> adv) {
  const Eigen::Index n = states.cols();
  if (static_cast<std::size_t>(n) != actions.size() || actions.size() != adv.size())
    throw ConfigError("surrogate: batch sizes disagree");
  nn::Tape tape;
  const Eigen::MatrixXd out = p.net.forward(states, tape);
  Eigen::MatrixXd dout(out.rows(), n);
  SurrogateGrad r;
  const double inv = 1.0 / static_cast<double>(n);
  if (p.head == HeadKind::categorical) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd lp = log_softmax(out.col(i));
      const Eigen::VectorXd pr = lp.array().exp().matrix();
      const int a = actions[static_cast<std::size_t>(i)].index;
      const double h = -(pr.array() * lp.array()).sum();
      r.value += inv * (adv[static_cast<std::size_t>(i)] * lp[a] + p.entropy_bonus * h);
      r.entropy += inv * h;
      // d log p_a / dlogits = e_a - p ; dH/dlogits = -p (log p + H)
      Eigen::VectorXd g = -adv[static_cast<std::size_t>(i)] * pr;
      g[a] += adv[static_cast<std::size_t>(i)];
      g += p.entropy_bonus * (-(pr.array() * (lp.array() + h))).matrix();
      dout.col(i) = inv * g;
    }
    r.log_std = Eigen::VectorXd();
  } else {
    const Eigen::ArrayXd inv_var = (-2.0 * p.log_std.array()).exp();
    const double h = (p.log_std.array() + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e)).sum();
    r.log_std = Eigen::VectorXd::Zero(p.log_std.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double A = adv[static_cast<std::size_t>(i)];
      const Eigen::VectorXd& a = actions[static_cast<std::size_t>(i)].value;
      const Eigen::ArrayXd diff = (a - out.col(i)).array();
      r.value += inv * (A * gaussian_log_density(a, out.col(i), p.log_std) + p.entropy_bonus * h);
      dout.col(i) = inv * A * (diff * inv_var).matrix();
      r.log_std += inv * (A * (diff.square() * inv_var - 1.0) + p.entropy_bonus).matrix();
    }
    r.entropy = h;
  }
  r.net = p.net.backward(tape, dout);
  return r;
}

/// Advantages: return-to-go minus the batch mean at the same time step,
/// standardized to zero mean and unit variance. A degenerate batch (zero
/// spread) yields all zeros.
inline std::vector<double> advantages(std::span<const Trajectory> batch, double gamma) {
  std::vector<std::vector<double>> g;
  std::size_t longest = 0;
  for (const auto& t : batch) {
    g.push_back(returns(t, gamma));
    longest = std::max(longest, t.size());
  }
  std::vector<double> base(longest, 0.0), count(longest, 0.0);
  for (const auto& gi : g)
    for (std::size_t k = 0; k < gi.size(); ++k) {
      base[k] += gi[k];
      count[k] += 1.0;
    }
  for (std::size_t k = 0; k < longest; ++k) base[k] /= count[k];

  std::vector<double> adv;
  for (const auto& gi : g)
    for (std::size_t k = 0; k < gi.size(); ++k) adv.push_back(gi[k] - base[k]);
  if (adv.empty()) return adv;
  double mean = 0.0, scale = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  for (const auto& gi : g)
    for (double v : gi) scale = std::max(scale, std::abs(v));
  double var = 0.0;
  for (double& a : adv) {
    a -= mean;
    var += a * a;
  }
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  if (!(sd > 1e-12 * std::max(1.0, scale))) {
    std::fill(adv.begin(), adv.end(), 0.0);
    return adv;
  }
  for (double& a : adv) a /= sd;
  return adv;
}

struct PolicyOptimizer {
  nn::AdamState net;
  nn::VectorAdam log_std;

  PolicyOptimizer() = default;
  explicit PolicyOptimizer(const Policy& p) : net(p.net), log_std(p.log_std.size()) {}
};

struct PgDiagnostics {
  double surrogate = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
};

/// One Adam ascent step on the policy-gradient surrogate of a batch.
inline PgDiagnostics pg_update(Policy& p, PolicyOptimizer& opt, std::span<const Trajectory> batch,
                               double gamma, double lr) {
  std::size_t n = 0;
  for (const auto& t : batch) n += t.size();
  if (batch.empty() || n == 0) throw ConfigError("pg_update: empty batch");
  const auto adv = advantages(batch, gamma);
  Eigen::MatrixXd states(p.net.in_dim(), static_cast<Eigen::Index>(n));
  std::vector<Action> actions;
  actions.reserve(n);
  Eigen::Index k = 0;
  for (const auto& t : batch)
    for (std::size_t i = 0; i < t.size(); ++i) {
      states.col(k++) = t.states[i];
      actions.push_back(t.actions[i]);
    }
  SurrogateGrad g = surrogate(p, states, actions, adv);
  PgDiagnostics diag{g.value, g.entropy, 0.0};
  for (const auto& w : g.net.weight) diag.grad_norm += w.squaredNorm();
  for (const auto& b : g.net.bias) diag.grad_norm += b.squaredNorm();
  diag.grad_norm = std::sqrt(diag.grad_norm + g.log_std.squaredNorm());
  // Ascent: hand Adam the negated gradient.
  g.net *= -1.0;
  nn::adam_step(p.net, g.net, opt.net, lr, lr);
  if (p.head == HeadKind::diagonal_gaussian) opt.log_std.apply(p.log_std, -g.log_std, lr);
  return diag;
}

}  // namespace ex2::rl
