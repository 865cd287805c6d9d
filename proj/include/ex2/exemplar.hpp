#pragma once

#include "ex2/core.hpp"
#include "ex2/nn.hpp"
#include "ex2/replay_buffer.hpp"

#include <cmath>
#include <deque>
#include <optional>
#include <variant>
#include <vector>

namespace ex2 {

struct TrainConfig {
  int negatives_per_step = 64;
  int positives_per_step = 0;  // 0: same as negatives_per_step
  /// Weight of the positive term in the cross-entropy. 0.5 is the balanced
  /// objective under which D(x*) = 1/(1 + P(x*)).
  double positive_fraction = 0.5;
  int steps = 200;
  double lr_shared = 5e-4;
  double lr_head = 1e-3;
  std::uint64_t seed = 0;

  int positives() const { return positives_per_step > 0 ? positives_per_step : negatives_per_step; }

  void validate() const {
    if (negatives_per_step <= 0) throw ConfigError("negatives_per_step must be positive");
    if (positives_per_step < 0) throw ConfigError("positives_per_step must be non-negative");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
      throw ConfigError("positive_fraction must lie in (0, 1)");
    if (!(lr_shared > 0.0) || !(lr_head > 0.0)) throw ConfigError("learning rates must be positive");
  }
};

/// Architecture of the per-state discriminators. An empty hidden list gives a
/// linear (tabular, for one-hot inputs) discriminator.
struct ExemplarArch {
  std::vector<int> hidden{16, 16};
  double sigma = 0.0;  // train-time input noise
  /// Standardize inputs (after noise) by the mean and spread of the negative
  /// pool before the first layer.
  bool standardize = false;
};

/// Fixed per-coordinate input transform (x - shift) / scale. Empty is identity.
struct InputScaler {
  Eigen::VectorXd shift, scale;

  bool empty() const { return shift.size() == 0; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (empty()) return x;
    return ((x.colwise() - shift).array().colwise() / scale.array()).matrix();
  }

  /// Mean and standard deviation of a pool; coordinates with (near) zero
  /// spread keep unit scale.
  template <StatePool Pool>
  static InputScaler fit(const Pool& pool) {
    InputScaler t;
    if (pool.size() == 0) throw EmptyInputError("InputScaler: empty pool");
    const Eigen::Index d = static_cast<const State&>(pool[0]).size();
    t.shift = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < pool.size(); ++i) t.shift += static_cast<const State&>(pool[i]);
    t.shift /= static_cast<double>(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      sq += (static_cast<const State&>(pool[i]) - t.shift).cwiseAbs2();
    t.scale = (sq / static_cast<double>(pool.size())).cwiseSqrt();
    for (Eigen::Index j = 0; j < d; ++j)
      if (!(t.scale[j] > 1e-8)) t.scale[j] = 1.0;
    return t;
  }
};

namespace detail {

// Mean of the trailing window of a loss trace.
inline double tail_mean(const std::deque<double>& window) {
  double s = 0.0;
  for (double v : window) s += v;
  return window.empty() ? 0.0 : s / static_cast<double>(window.size());
}

inline void push_window(std::deque<double>& w, double v, std::size_t n = 50) {
  w.push_back(v);
  if (w.size() > n) w.pop_front();
}

template <StatePool Pool>
Eigen::MatrixXd draw_negatives(const Pool& pool, int m, Eigen::Index dim, double sigma,
                               Rng& rng) {
  Eigen::MatrixXd x(dim, m);
  for (int j = 0; j < m; ++j) {
    const State& s = pool[uniform_index(rng, pool.size())];
    if (s.size() != dim) throw ConfigError("negative state dimension mismatch");
    x.col(j) = s;
  }
  if (sigma > 0.0) x += sigma * standard_normal(rng, dim, m);
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single exemplar

struct SingleExemplar {
  State exemplar;
  nn::Mlp net;
  InputScaler scaler;
  double sigma = 0.0;
  double train_loss = 0.0;

  double logit(const State& x) const { return net.forward(scaler.apply(x))(0, 0); }
  double evaluate(const State& x) const {
    if (x.size() != exemplar.size()) throw ConfigError("evaluate: state dimension mismatch");
    return nn::sigmoid(logit(x));
  }
};

struct ExemplarLoss {
  double loss = 0.0;
  nn::MlpGrad grad;
};

/// Weighted cross-entropy of one discriminator over already scaled inputs:
/// the first p columns of x are positives with weight wp each, the rest
/// negatives with weight wn each.
inline ExemplarLoss exemplar_loss(const nn::Mlp& net, const Eigen::MatrixXd& x, int p, double wp, double wn) {
  nn::Tape tape;
  const Eigen::MatrixXd logits = net.forward(x, tape);
  Eigen::MatrixXd dlogit(1, x.cols());
  ExemplarLoss r;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const bool pos = j < p;
    const auto b = nn::bce_from_logit(logits(0, j), pos ? 1.0 : 0.0);
    const double w = pos ? wp : wn;
    r.loss += w * b.loss;
    dlogit(0, j) = w * b.dlogit;
  }
  r.grad = net.backward(tape, dlogit);
  return r;
}

/// Trains D_{x*} on balanced minibatches: copies of the exemplar (label 1)
/// against states drawn uniformly from `negatives` (label 0). With sigma > 0
/// both sides receive Gaussian input noise.
template <StatePool Pool>
SingleExemplar train_single(const State& exemplar, const Pool& negatives,
                            const TrainConfig& cfg, const ExemplarArch& arch = {}) {
  cfg.validate();
  if (negatives.size() == 0) throw EmptyInputError("train_single: no negatives");
  const Eigen::Index d = exemplar.size();
  Rng init(derive_seed(cfg.seed, Stream::init));
  Rng draws(derive_seed(cfg.seed, Stream::negatives));

  SingleExemplar model;
  model.exemplar = exemplar;
  model.sigma = arch.sigma;
  model.net = nn::Mlp::make(d, arch.hidden, 1, nn::Activation::tanh, nn::Activation::linear, init);
  if (arch.standardize) model.scaler = InputScaler::fit(negatives);
  nn::AdamState opt(model.net);

  const int p = cfg.positives();
  const int m = cfg.negatives_per_step;
  const double wp = cfg.positive_fraction / p;
  const double wn = (1.0 - cfg.positive_fraction) / m;
  std::deque<double> window;
  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd x(d, p + m);
    x.leftCols(p) = exemplar.replicate(1, p);
    if (arch.sigma > 0.0) x.leftCols(p) += arch.sigma * standard_normal(draws, d, p);
    x.rightCols(m) = detail::draw_negatives(negatives, m, d, arch.sigma, draws);

    const auto r = exemplar_loss(model.net, model.scaler.apply(x), p, wp, wn);
    if (!std::isfinite(r.loss)) throw TrainingError("non-finite exemplar loss at step", step);
    nn::adam_step(model.net, r.grad, opt, cfg.lr_shared, cfg.lr_head);
    detail::push_window(window, r.loss);
  }
  model.train_loss = detail::tail_mean(window);
  return model;
}

// ---------------------------------------------------------------------------
// K-exemplar bank

/// A bank of K-exemplar discriminators sharing every layer but the last.
/// Discriminator h is trained with positives drawn uniformly from groups[h].
struct KExemplar {
  std::vector<std::vector<State>> groups;
  nn::Mlp trunk;  // empty: identity features
  nn::Mlp head;   // one linear layer, one output per group
  InputScaler scaler;
  double sigma = 0.0;
  double train_loss = 0.0;

  std::size_t num_heads() const { return groups.size(); }
  Eigen::Index state_dim() const { return groups.empty() ? 0 : groups.front().front().size(); }

  Eigen::MatrixXd features(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd z = scaler.apply(x);
    return trunk.empty() ? z : trunk.forward(z);
  }

  /// D_h(x) for a single head.
  double evaluate(const State& x, std::size_t h) const {
    if (x.size() != state_dim()) throw ConfigError("evaluate: state dimension mismatch");
    if (h >= num_heads()) throw ConfigError("evaluate: head index out of range");
    const Eigen::VectorXd f = features(Eigen::MatrixXd(x)).col(0);
    const auto& l = head.layers.front();
    return nn::sigmoid(l.weight.row(static_cast<Eigen::Index>(h)).dot(f) + l.bias[h]);
  }

  /// D at every member of every group, evaluated with the member's own head.
  std::vector<std::vector<double>> evaluate_members() const {
    std::vector<std::vector<double>> out(groups.size());
    const auto& l = head.layers.front();
    for (std::size_t h = 0; h < groups.size(); ++h) {
      Eigen::MatrixXd x(state_dim(), static_cast<Eigen::Index>(groups[h].size()));
      for (std::size_t k = 0; k < groups[h].size(); ++k) x.col(static_cast<Eigen::Index>(k)) = groups[h][k];
      const Eigen::MatrixXd f = features(x);
      for (Eigen::Index k = 0; k < f.cols(); ++k)
        out[h].push_back(nn::sigmoid(l.weight.row(static_cast<Eigen::Index>(h)).dot(f.col(k)) + l.bias[h]));
    }
    return out;
  }

  /// Index of the first group containing x exactly, if any.
  std::optional<std::size_t> head_for(const State& x) const {
    for (std::size_t h = 0; h < groups.size(); ++h)
      for (const auto& s : groups[h])
        if (s.size() == x.size() && s == x) return h;
    return std::nullopt;
  }
};

struct BankLoss {
  double loss = 0.0;
  nn::MlpGrad trunk, head;
};

/// Joint loss of a bank over already scaled inputs. Columns [h p, (h + 1) p)
/// of xpos are positives of head h (weight wp each); every column of xneg is
/// a negative for every head (weight wn per head).
inline BankLoss bank_loss(const KExemplar& model, const Eigen::MatrixXd& xpos, const Eigen::MatrixXd& xneg, int p,
                          double wp, double wn) {
  const auto heads = static_cast<Eigen::Index>(model.num_heads());
  if (xpos.cols() != heads * p) throw ConfigError("bank_loss: positive count does not match heads");
  nn::Tape tape_pos, tape_neg;
  const Eigen::MatrixXd fpos = model.trunk.empty() ? xpos : model.trunk.forward(xpos, tape_pos);
  const Eigen::MatrixXd fneg = model.trunk.empty() ? xneg : model.trunk.forward(xneg, tape_neg);
  const Eigen::Index f = fpos.rows();
  const auto& hl = model.head.layers.front();
  // Head weights gathered per positive column.
  Eigen::MatrixXd wpos(f, heads * p);
  Eigen::RowVectorXd bpos(heads * p);
  for (Eigen::Index h = 0; h < heads; ++h) {
    wpos.middleCols(h * p, p) = hl.weight.row(h).transpose().replicate(1, p);
    bpos.segment(h * p, p).setConstant(hl.bias[h]);
  }
  const Eigen::ArrayXXd lpos = (wpos.array() * fpos.array()).colwise().sum() + bpos.array();
  const Eigen::ArrayXXd lneg = ((hl.weight * fneg).colwise() + hl.bias).array();
  const auto pos_bce = nn::bce_from_logits(lpos, 1.0);
  const auto neg_bce = nn::bce_from_logits(lneg, 0.0);
  BankLoss r;
  r.loss = wp * pos_bce.loss.sum() + wn * neg_bce.loss.sum();
  const Eigen::RowVectorXd dlpos = wp * pos_bce.dlogit.matrix();
  const Eigen::MatrixXd dlneg = wn * neg_bce.dlogit.matrix();

  r.head = model.head.zero_grad();
  for (Eigen::Index h = 0; h < heads; ++h) {
    r.head.weight[0].row(h).noalias() = (fpos.middleCols(h * p, p) * dlpos.segment(h * p, p).transpose()).transpose();
    r.head.bias[0][h] = dlpos.segment(h * p, p).sum();
  }
  r.head.weight[0].noalias() += dlneg * fneg.transpose();
  r.head.bias[0] += dlneg.rowwise().sum();

  if (!model.trunk.empty()) {
    const Eigen::MatrixXd dfpos = wpos * dlpos.asDiagonal();
    const Eigen::MatrixXd dfneg = hl.weight.transpose() * dlneg;
    r.trunk = model.trunk.backward(tape_pos, dfpos);
    r.trunk += model.trunk.backward(tape_neg, dfneg);
  }
  return r;
}

/// Trains every discriminator of the bank jointly. Each step draws
/// positives_per_step positives per head from its own group and one shared
/// set of negatives; the trunk receives gradients from all heads, each head
/// only from its own loss.
template <StatePool Pool>
KExemplar train_k(std::vector<std::vector<State>> groups, const Pool& negatives,
                  const TrainConfig& cfg, const ExemplarArch& arch = {}) {
  cfg.validate();
  if (groups.empty()) throw ConfigError("train_k: no discriminators requested");
  for (const auto& g : groups)
    if (g.empty()) throw ConfigError("train_k: every discriminator needs K >= 1 positives");
  if (negatives.size() == 0) throw EmptyInputError("train_k: no negatives");
  const Eigen::Index d = groups.front().front().size();
  for (const auto& g : groups)
    for (const auto& s : g)
      if (s.size() != d) throw ConfigError("train_k: positive dimension mismatch");

  const auto heads = static_cast<Eigen::Index>(groups.size());
  Rng init(derive_seed(cfg.seed, Stream::init));
  Rng draws(derive_seed(cfg.seed, Stream::negatives));

  KExemplar model;
  model.groups = std::move(groups);
  model.sigma = arch.sigma;
  model.trunk = nn::Mlp::make(d, arch.hidden, 0, nn::Activation::tanh, nn::Activation::linear, init);
  if (arch.standardize) model.scaler = InputScaler::fit(negatives);
  const Eigen::Index f = arch.hidden.empty() ? d : arch.hidden.back();
  {
    // Each head row is initialized like the output layer of a single
    // exemplar network, so a one-head bank starts from the same weights.
    nn::Layer l;
    l.weight.resize(heads, f);
    const double a = std::sqrt(6.0 / static_cast<double>(f + 1));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index h = 0; h < heads; ++h)
      for (Eigen::Index c = 0; c < f; ++c) l.weight(h, c) = u(init);
    l.bias = Eigen::VectorXd::Zero(heads);
    l.activation = nn::Activation::linear;
    l.group = nn::LrGroup::head;
    model.head = nn::Mlp({std::move(l)});
  }
  nn::AdamState trunk_opt(model.trunk), head_opt(model.head);

  const int p = cfg.positives();
  const int m = cfg.negatives_per_step;
  const double wp = cfg.positive_fraction / (p * static_cast<double>(heads));
  const double wn = (1.0 - cfg.positive_fraction) / (m * static_cast<double>(heads));
  std::deque<double> window;

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd xpos(d, heads * p);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto& g = model.groups[static_cast<std::size_t>(h)];
      for (int j = 0; j < p; ++j) {
        const std::size_t idx = g.size() > 1 ? uniform_index(draws, g.size()) : 0;
        xpos.col(h * p + j) = g[idx];
      }
    }
    if (arch.sigma > 0.0) xpos += arch.sigma * standard_normal(draws, d, heads * p);
    const Eigen::MatrixXd xneg = model.scaler.apply(detail::draw_negatives(negatives, m, d, arch.sigma, draws));
    xpos = model.scaler.apply(xpos);

    const auto r = bank_loss(model, xpos, xneg, p, wp, wn);
    if (!std::isfinite(r.loss)) throw TrainingError("non-finite exemplar loss at step", step);
    if (!model.trunk.empty()) nn::adam_step(model.trunk, r.trunk, trunk_opt, cfg.lr_shared, cfg.lr_head);
    nn::adam_step(model.head, r.head, head_opt, cfg.lr_shared, cfg.lr_head);
    // The 1/heads weights make this the mean per-discriminator loss.
    detail::push_window(window, r.loss);
  }
  model.train_loss = detail::tail_mean(window);
  return model;
}

/// Splits each trajectory's states into consecutive runs of k, the last run
/// of a trajectory possibly shorter.
template <class Trajectories>
std::vector<std::vector<State>> consecutive_groups(const Trajectories& trajectories, int k) {
  if (k < 1) throw ConfigError("K must be at least 1");
  std::vector<std::vector<State>> out;
  for (const auto& t : trajectories)
    for (std::size_t i = 0; i < t.states.size(); i += static_cast<std::size_t>(k)) {
      std::vector<State> g;
      for (std::size_t j = i; j < std::min(t.states.size(), i + static_cast<std::size_t>(k)); ++j)
        g.push_back(t.states[j]);
      out.push_back(std::move(g));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Amortized latent model

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// KL(N(mu, diag(exp(logvar))) || N(0, I)).
inline double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

struct AmortizedLatent {
  nn::Mlp encoder_ex;     // x* -> (mu*, logvar*)
  nn::Mlp encoder_query;  // x  -> (mu, logvar)
  nn::Mlp discriminator;  // [z*, z] -> logit
  int latent_dim = 16;
  double kl_weight = 0.01;
  int eval_samples = 32;
  /// Refit `scaler` on the negative pool at the start of every training call.
  bool standardize = false;
  /// Gaussian noise added to the query state of every training pair.
  double input_noise = 0.0;
  InputScaler scaler;
  double train_loss = 0.0;
  nn::AdamState opt_ex, opt_query, opt_disc;

  Eigen::Index state_dim() const { return encoder_ex.in_dim(); }

  static AmortizedLatent make(Eigen::Index state_dim, int latent_dim, std::vector<int> hidden,
                              double kl_weight, int eval_samples, std::uint64_t seed) {
    if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
    if (!(kl_weight > 0.0)) throw ConfigError("kl_weight must be positive");
    if (eval_samples < 1) throw ConfigError("eval_samples must be at least 1");
    Rng rng(derive_seed(seed, Stream::init));
    AmortizedLatent m;
    m.latent_dim = latent_dim;
    m.kl_weight = kl_weight;
    m.eval_samples = eval_samples;
    using nn::Activation;
    m.encoder_ex = nn::Mlp::make(state_dim, hidden, 2 * latent_dim, Activation::tanh, Activation::linear, rng);
    m.encoder_query = nn::Mlp::make(state_dim, hidden, 2 * latent_dim, Activation::tanh, Activation::linear, rng);
    m.discriminator = nn::Mlp::make(2 * latent_dim, hidden, 1, Activation::tanh, Activation::linear, rng);
    m.reset_optimizers();
    return m;
  }

  void reset_optimizers() {
    opt_ex = nn::AdamState(encoder_ex);
    opt_query = nn::AdamState(encoder_query);
    opt_disc = nn::AdamState(discriminator);
  }

  /// D(x) = E_q[D(z*, z)] with x* = x, estimated from eval_samples latent
  /// draws per state. Column n of x uses its own stream derived from seed.
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& x, std::uint64_t seed,
                           std::uint64_t index_offset = 0) const;

  double evaluate(const State& x, std::uint64_t seed) const {
    return evaluate(Eigen::MatrixXd(x), seed)[0];
  }
};

struct LatentBatch {
  Eigen::MatrixXd x_star;    // state_dim x B
  Eigen::MatrixXd x;         // state_dim x B
  Eigen::VectorXd labels;    // B
  Eigen::VectorXd weights;   // B, per-sample loss weights
  Eigen::MatrixXd eps_star;  // latent_dim x B
  Eigen::MatrixXd eps;       // latent_dim x B
};

struct LatentLossResult {
  double loss = 0.0;
  double bce = 0.0;
  double kl = 0.0;
  nn::MlpGrad grad_ex, grad_query, grad_disc;
};

namespace detail {

struct Encoded {
  Eigen::MatrixXd mu, logvar, z, std;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;
};

inline Encoded reparameterize(const Eigen::MatrixXd& h, int dz, const Eigen::MatrixXd& eps) {
  Encoded e;
  e.mu = h.topRows(dz);
  const Eigen::MatrixXd raw = h.bottomRows(dz);
  e.logvar = raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  e.clamped = (raw.array() < kLogVarMin) || (raw.array() > kLogVarMax);
  e.std = (0.5 * e.logvar.array()).exp().matrix();
  e.z = e.mu + e.std.cwiseProduct(eps);
  return e;
}

// Upstream gradient for an encoder head given dLoss/dz and the KL weight per
// column (lambda times the sample weight).
inline Eigen::MatrixXd encoder_upstream(const Encoded& e, const Eigen::MatrixXd& dz,
                                        const Eigen::MatrixXd& eps, const Eigen::RowVectorXd& klw) {
  const Eigen::Index k = e.mu.rows();
  Eigen::MatrixXd up(2 * k, e.mu.cols());
  up.topRows(k) = dz + e.mu * klw.asDiagonal();
  Eigen::MatrixXd dlv = (dz.array() * eps.array() * 0.5 * e.std.array()).matrix() +
                        (0.5 * (e.logvar.array().exp() - 1.0)).matrix() * klw.asDiagonal();
  up.bottomRows(k) = e.clamped.select(Eigen::ArrayXXd::Zero(k, dlv.cols()), dlv.array()).matrix();
  return up;
}

}  // namespace detail

/// Weighted latent objective over a batch of (x*, x, y) triples with frozen
/// reparameterization noise:
///   sum_i w_i [ BCE(D(z*_i, z_i), y_i) + lambda (KL(q(z*|x*_i)) + KL(q(z|x_i))) ].
inline LatentLossResult latent_loss(const AmortizedLatent& model, const LatentBatch& b) {
  const int dz = model.latent_dim;
  const Eigen::Index n = b.x.cols();
  if (b.x_star.cols() != n || b.labels.size() != n || b.weights.size() != n ||
      b.eps.cols() != n || b.eps_star.cols() != n || b.eps.rows() != dz || b.eps_star.rows() != dz)
    throw ConfigError("latent_loss: batch shapes disagree");

  nn::Tape t_ex, t_q, t_d;
  const auto es = detail::reparameterize(model.encoder_ex.forward(model.scaler.apply(b.x_star), t_ex), dz, b.eps_star);
  const auto eq = detail::reparameterize(model.encoder_query.forward(model.scaler.apply(b.x), t_q), dz, b.eps);
  Eigen::MatrixXd zc(2 * dz, n);
  zc.topRows(dz) = es.z;
  zc.bottomRows(dz) = eq.z;
  const Eigen::MatrixXd logits = model.discriminator.forward(zc, t_d);

  LatentLossResult r;
  Eigen::MatrixXd dlogit(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto bce = nn::bce_from_logit(logits(0, i), b.labels[i]);
    const double kl = gaussian_kl(es.mu.col(i), es.logvar.col(i)) + gaussian_kl(eq.mu.col(i), eq.logvar.col(i));
    r.bce += b.weights[i] * bce.loss;
    r.kl += b.weights[i] * kl;
    dlogit(0, i) = b.weights[i] * bce.dlogit;
  }
  r.loss = r.bce + model.kl_weight * r.kl;

  Eigen::MatrixXd dzc;
  r.grad_disc = model.discriminator.backward(t_d, dlogit, &dzc);
  const Eigen::RowVectorXd klw = model.kl_weight * b.weights.transpose();
  r.grad_ex = model.encoder_ex.backward(t_ex, detail::encoder_upstream(es, dzc.topRows(dz), b.eps_star, klw));
  r.grad_query = model.encoder_query.backward(t_q, detail::encoder_upstream(eq, dzc.bottomRows(dz), b.eps, klw));
  return r;
}

/// Single-triple form with unit weight.
inline LatentLossResult latent_loss(const AmortizedLatent& model, const State& x_star, const State& x,
                                    double label, const Eigen::VectorXd& eps_star,
                                    const Eigen::VectorXd& eps) {
  LatentBatch b{Eigen::MatrixXd(x_star), Eigen::MatrixXd(x), Eigen::VectorXd::Constant(1, label),
                Eigen::VectorXd::Ones(1), Eigen::MatrixXd(eps_star), Eigen::MatrixXd(eps)};
  return latent_loss(model, b);
}

inline Eigen::VectorXd AmortizedLatent::evaluate(const Eigen::MatrixXd& x, std::uint64_t seed,
                                                 std::uint64_t index_offset) const {
  if (x.rows() != state_dim()) throw ConfigError("evaluate: state dimension mismatch");
  const int dz = latent_dim;
  const Eigen::Index n = x.cols();
  const Eigen::MatrixXd xs = scaler.apply(x);
  const Eigen::MatrixXd hs = encoder_ex.forward(xs);
  const Eigen::MatrixXd hq = encoder_query.forward(xs);
  Eigen::VectorXd out(n);
  const int s = eval_samples;
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, Stream::evaluation, index_offset + static_cast<std::uint64_t>(i)));
    const Eigen::MatrixXd eps_s = standard_normal(rng, dz, s);
    const Eigen::MatrixXd eps_q = standard_normal(rng, dz, s);
    const auto es = detail::reparameterize(hs.col(i).replicate(1, s), dz, eps_s);
    const auto eq = detail::reparameterize(hq.col(i).replicate(1, s), dz, eps_q);
    Eigen::MatrixXd zc(2 * dz, s);
    zc.topRows(dz) = es.z;
    zc.bottomRows(dz) = eq.z;
    const Eigen::MatrixXd logits = discriminator.forward(zc);
    double acc = 0.0;
    for (int j = 0; j < s; ++j) acc += nn::sigmoid(logits(0, j));
    out[i] = acc / s;
  }
  return out;
}

/// Fine-tunes an amortized model in place. Each step pairs exemplars drawn
/// from `exemplars` with themselves (label 1) or with states drawn from
/// `negatives` (label 0). Returns the per-step losses.
template <StatePool ExPool, StatePool NegPool>
std::vector<double> train_amortized(AmortizedLatent& model, const ExPool& exemplars,
                                    const NegPool& negatives, const TrainConfig& cfg) {
  cfg.validate();
  if (exemplars.size() == 0 || negatives.size() == 0)
    throw EmptyInputError("train_amortized: empty exemplar or negative pool");
  if (model.standardize) model.scaler = InputScaler::fit(negatives);
  const Eigen::Index d = model.state_dim();
  const int dz = model.latent_dim;
  const int p = cfg.positives();
  const int m = cfg.negatives_per_step;
  Rng draws(derive_seed(cfg.seed, Stream::negatives));
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  std::deque<double> window;

  LatentBatch b;
  b.labels.resize(p + m);
  b.weights.resize(p + m);
  b.labels.head(p).setOnes();
  b.labels.tail(m).setZero();
  b.weights.head(p).setConstant(cfg.positive_fraction / p);
  b.weights.tail(m).setConstant((1.0 - cfg.positive_fraction) / m);
  for (int step = 0; step < cfg.steps; ++step) {
    b.x_star.resize(d, p + m);
    b.x.resize(d, p + m);
    for (int j = 0; j < p + m; ++j) {
      const State& ex = exemplars[uniform_index(draws, exemplars.size())];
      if (ex.size() != d) throw ConfigError("train_amortized: exemplar dimension mismatch");
      b.x_star.col(j) = ex;
      b.x.col(j) = j < p ? ex : negatives[uniform_index(draws, negatives.size())];
    }
    if (model.input_noise > 0.0) b.x += model.input_noise * standard_normal(draws, d, p + m);
    b.eps_star = standard_normal(draws, dz, p + m);
    b.eps = standard_normal(draws, dz, p + m);
    const auto r = latent_loss(model, b);
    if (!std::isfinite(r.loss)) throw TrainingError("non-finite latent loss at step", step);
    nn::adam_step(model.encoder_ex, r.grad_ex, model.opt_ex, cfg.lr_shared, cfg.lr_head);
    nn::adam_step(model.encoder_query, r.grad_query, model.opt_query, cfg.lr_shared, cfg.lr_head);
    nn::adam_step(model.discriminator, r.grad_disc, model.opt_disc, cfg.lr_shared, cfg.lr_head);
    losses.push_back(r.loss);
    detail::push_window(window, r.loss);
  }
  model.train_loss = detail::tail_mean(window);
  return losses;
}

// ---------------------------------------------------------------------------

using ExemplarModel = std::variant<SingleExemplar, KExemplar, AmortizedLatent>;

/// Discriminator output at x. K-exemplar banks use the head whose group
/// contains x; amortized models use `seed` for their latent draws.
inline double evaluate(const ExemplarModel& model, const State& x, std::uint64_t seed = 0) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SingleExemplar>) {
          return m.evaluate(x);
        } else if constexpr (std::is_same_v<T, KExemplar>) {
          const auto h = m.head_for(x);
          if (!h) throw ConfigError("evaluate: state is not a positive of any K-exemplar head");
          return m.evaluate(x, *h);
        } else {
          return m.evaluate(x, seed);
        }
      },
      model);
}

}  // namespace ex2
