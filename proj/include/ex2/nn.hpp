#pragma once

#include "ex2/core.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace ex2::nn {

enum class Activation { tanh, relu, linear };

/// Learning-rate group. Shared feature layers and the final unshared layer
/// are optimized with different step sizes.
enum class LrGroup { shared, head };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::linear;
  LrGroup group = LrGroup::shared;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

inline Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& pre) {
  switch (a) {
    case Activation::tanh:
      return pre.array().tanh().matrix();
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::linear:
      break;
  }
  return pre;
}

// Derivative expressed through the post-activation output.
inline Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& out,
                                       const Eigen::MatrixXd& upstream) {
  switch (a) {
    case Activation::tanh:
      return (upstream.array() * (1.0 - out.array().square())).matrix();
    case Activation::relu:
      return (upstream.array() * (out.array() > 0.0).cast<double>()).matrix();
    case Activation::linear:
      break;
  }
  return upstream;
}

/// Gradient container with the same shape as an Mlp.
struct MlpGrad {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  MlpGrad& operator+=(const MlpGrad& o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] += o.weight[i];
      bias[i] += o.bias[i];
    }
    return *this;
  }
  MlpGrad& operator*=(double s) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] *= s;
      bias[i] *= s;
    }
    return *this;
  }
};

/// Activations recorded during a batched forward pass. inputs[i] is the
/// input of layer i; outputs[i] its post-activation output. Columns are
/// samples.
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> outputs;
};

/// Dense feed-forward network. A network without layers is the identity.
class Mlp {
 public:
  std::vector<Layer> layers;

  Mlp() = default;
  explicit Mlp(std::vector<Layer> l) : layers(std::move(l)) { validate(); }

  /// Xavier-uniform weights, zero biases. Hidden layers use `hidden_act` and
  /// are tagged shared; the output layer uses `out_act` and is tagged head.
  static Mlp make(Eigen::Index in, const std::vector<int>& hidden,
                  Eigen::Index out, Activation hidden_act, Activation out_act,
                  Rng& rng) {
    std::vector<Layer> ls;
    Eigen::Index prev = in;
    auto add = [&](Eigen::Index next, Activation act, LrGroup g) {
      const double a = std::sqrt(6.0 / static_cast<double>(prev + next));
      std::uniform_real_distribution<double> u(-a, a);
      Layer l;
      l.weight.resize(next, prev);
      for (Eigen::Index c = 0; c < prev; ++c)
        for (Eigen::Index r = 0; r < next; ++r) l.weight(r, c) = u(rng);
      l.bias = Eigen::VectorXd::Zero(next);
      l.activation = act;
      l.group = g;
      ls.push_back(std::move(l));
      prev = next;
    };
    for (int h : hidden) add(h, hidden_act, LrGroup::shared);
    if (out > 0) add(out, out_act, LrGroup::head);
    return Mlp(std::move(ls));
  }

  bool empty() const { return layers.empty(); }
  Eigen::Index in_dim() const { return layers.empty() ? -1 : layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.empty() ? -1 : layers.back().out_dim(); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.weight.rows())
        throw ConfigError("layer " + std::to_string(i) + ": bias size mismatch");
      if (i + 1 < layers.size() && l.out_dim() != layers[i + 1].in_dim())
        throw ConfigError("layer " + std::to_string(i) +
                          ": output dim does not chain into next layer");
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw ConfigError("layer " + std::to_string(i) + ": non-finite parameter");
    }
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    check_input(x.rows());
    Eigen::MatrixXd h = x;
    for (const auto& l : layers)
      h = activate(l.activation, (l.weight * h).colwise() + l.bias);
    return h;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return forward(Eigen::MatrixXd(x)).col(0);
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const {
    check_input(x.rows());
    tape.inputs.resize(layers.size());
    tape.outputs.resize(layers.size());
    Eigen::MatrixXd h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      tape.inputs[i] = h;
      h = activate(l.activation, (l.weight * h).colwise() + l.bias);
      tape.outputs[i] = h;
    }
    return h;
  }

  /// Backpropagates `upstream` (dLoss/dOutput, one column per sample) through
  /// a recorded tape. Parameter gradients are summed over samples; the input
  /// gradient is returned through `dinput` when non-null.
  MlpGrad backward(const Tape& tape, const Eigen::MatrixXd& upstream,
                   Eigen::MatrixXd* dinput = nullptr) const {
    MlpGrad g = zero_grad();
    if (layers.empty()) {
      if (dinput) *dinput = upstream;
      return g;
    }
    if (tape.outputs.size() != layers.size() ||
        upstream.rows() != out_dim() ||
        upstream.cols() != tape.outputs.back().cols())
      throw ConfigError("backward: upstream gradient does not match forward pass");
    Eigen::MatrixXd d = upstream;
    for (std::size_t k = layers.size(); k-- > 0;) {
      const auto& l = layers[k];
      Eigen::MatrixXd dpre = activation_grad(l.activation, tape.outputs[k], d);
      g.weight[k].noalias() = dpre * tape.inputs[k].transpose();
      g.bias[k] = dpre.rowwise().sum();
      if (k > 0 || dinput) d.noalias() = l.weight.transpose() * dpre;
    }
    if (dinput) *dinput = std::move(d);
    return g;
  }

  MlpGrad zero_grad() const {
    MlpGrad g;
    for (const auto& l : layers) {
      g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
    return g;
  }

  // Flat parameter view, layer by layer: weight (column-major) then bias.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(num_params());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
      out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != num_params()) throw ConfigError("unflatten: size mismatch");
    std::size_t p = 0;
    for (auto& l : layers) {
      std::copy_n(flat.data() + p, l.weight.size(), l.weight.data());
      p += l.weight.size();
      std::copy_n(flat.data() + p, l.bias.size(), l.bias.data());
      p += l.bias.size();
    }
  }

 private:
  void check_input(Eigen::Index rows) const {
    if (!layers.empty() && rows != in_dim())
      throw ConfigError("mlp input has " + std::to_string(rows) +
                        " rows, expected " + std::to_string(in_dim()));
  }
};

inline std::vector<double> flatten(const MlpGrad& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    out.insert(out.end(), g.weight[i].data(), g.weight[i].data() + g.weight[i].size());
    out.insert(out.end(), g.bias[i].data(), g.bias[i].data() + g.bias[i].size());
  }
  return out;
}

/// Single-sample backward pass: gradient of a loss whose output gradient is
/// `upstream`, together with the input gradient.
inline std::pair<MlpGrad, Eigen::VectorXd> backward(const Mlp& net,
                                                    const Eigen::VectorXd& input,
                                                    const Eigen::VectorXd& upstream) {
  Tape tape;
  net.forward(Eigen::MatrixXd(input), tape);
  if (upstream.size() != net.out_dim())
    throw ConfigError("backward: upstream size does not match network output");
  Eigen::MatrixXd dx;
  MlpGrad g = net.backward(tape, Eigen::MatrixXd(upstream), &dx);
  return {std::move(g), dx.col(0)};
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct BceResult {
  double loss;
  double dlogit;
};

/// Sigmoid cross-entropy on a logit; soft labels allowed.
inline BceResult bce_from_logit(double logit, double label) {
  const double loss =
      std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - label};
}

struct BceArrays {
  Eigen::ArrayXXd loss;
  Eigen::ArrayXXd dlogit;
};

/// Elementwise bce_from_logit over an array of logits sharing one label.
inline BceArrays bce_from_logits(const Eigen::ArrayXXd& logits, double label) {
  const Eigen::ArrayXXd e = (-logits.abs()).exp();
  BceArrays r;
  r.loss = logits.max(0.0) - logits * label + e.log1p();
  // sigmoid(l) = 1/(1+e) for l >= 0, e/(1+e) otherwise, with e = exp(-|l|)
  r.dlogit = (logits >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)) - label;
  return r;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {
template <class P, class G>
void adam_block(P& param, const G& grad, P& m, P& v, double lr, long t,
                const AdamConfig& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
}
}  // namespace detail

class AdamState {
 public:
  AdamConfig config;
  std::vector<Eigen::MatrixXd> m_weight, v_weight;
  std::vector<Eigen::VectorXd> m_bias, v_bias;
  long step = 0;

  AdamState() = default;
  explicit AdamState(const Mlp& net, AdamConfig c = {}) : config(c) {
    for (const auto& l : net.layers) {
      m_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      v_weight.push_back(m_weight.back());
      m_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
      v_bias.push_back(m_bias.back());
    }
  }
};

/// One Adam descent step. Layers tagged shared use lr_shared, head layers
/// use lr_head.
inline void adam_step(Mlp& net, const MlpGrad& grad, AdamState& state,
                      double lr_shared, double lr_head) {
  if (state.m_weight.size() != net.layers.size() ||
      grad.weight.size() != net.layers.size())
    throw ConfigError("adam_step: optimizer state does not match network");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (grad.weight[i].rows() != net.layers[i].weight.rows() ||
        grad.weight[i].cols() != net.layers[i].weight.cols())
      throw ConfigError("adam_step: gradient shape mismatch at layer " +
                        std::to_string(i));
    if (!grad.weight[i].allFinite() || !grad.bias[i].allFinite())
      throw TrainingError("non-finite gradient in layer", static_cast<long>(i));
  }
  ++state.step;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    const double lr = l.group == LrGroup::head ? lr_head : lr_shared;
    detail::adam_block(l.weight, grad.weight[i], state.m_weight[i],
                       state.v_weight[i], lr, state.step, state.config);
    detail::adam_block(l.bias, grad.bias[i], state.m_bias[i], state.v_bias[i],
                       lr, state.step, state.config);
  }
}

/// Adam on a free parameter vector (e.g. a state-independent log-std).
class VectorAdam {
 public:
  AdamConfig config;
  Eigen::VectorXd m, v;
  long step = 0;

  VectorAdam() = default;
  explicit VectorAdam(Eigen::Index n, AdamConfig c = {})
      : config(c), m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

  void apply(Eigen::VectorXd& param, const Eigen::VectorXd& grad, double lr) {
    if (!grad.allFinite()) throw TrainingError("non-finite gradient in vector", 0);
    ++step;
    detail::adam_block(param, grad, m, v, lr, step, config);
  }
};

/// Relative error used by the gradient checker; the floor keeps coordinates
/// with vanishing gradients from dividing finite-difference noise by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of an analytic gradient over a flat parameter
/// vector. Above `max_coords` parameters a seeded random subset is checked.
inline double grad_check(const std::function<double(std::span<const double>)>& loss,
                         std::span<const double> params,
                         std::span<const double> analytic, double h = 1e-5,
                         std::size_t max_coords = 1000, std::uint64_t seed = 0) {
  if (params.size() != analytic.size())
    throw ConfigError("grad_check: gradient size mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > max_coords) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }
  std::vector<double> x(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double orig = x[c];
    x[c] = orig + h;
    const double up = loss(x);
    x[c] = orig - h;
    const double down = loss(x);
    x[c] = orig;
    worst = std::max(worst, relative_error(analytic[c], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Convenience overload: `loss_fn` returns the loss and its analytic gradient
/// for a network.
inline double grad_check(const std::function<std::pair<double, MlpGrad>(const Mlp&)>& loss_fn,
                         const Mlp& params, double h = 1e-5) {
  const auto analytic = flatten(loss_fn(params).second);
  const auto flat = params.flatten();
  Mlp scratch = params;
  return grad_check(
      [&](std::span<const double> p) {
        scratch.unflatten(p);
        return loss_fn(scratch).first;
      },
      flat, analytic, h);
}

}  // namespace ex2::nn
