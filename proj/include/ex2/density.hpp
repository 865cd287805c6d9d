#pragma once

#include "ex2/core.hpp"
#include "ex2/exemplar.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace ex2 {

inline constexpr double kDClampLow = 1e-6;
inline constexpr double kDClampHigh = 1.0 - 1e-6;

/// Clamps a discriminator output into [1e-6, 1 - 1e-6]; `clamped` is set
/// when the value had to move.
inline double clamp_d(double d, bool* clamped = nullptr) {
  const double c = std::min(std::max(d, kDClampLow), kDClampHigh);
  if (clamped) *clamped = c != d;
  return c;
}

/// Unnormalized density (1 - D) / D recovered from a discriminator output.
inline double density_from_d(double d, bool* clamped = nullptr) {
  const double c = clamp_d(d, clamped);
  return (1.0 - c) / c;
}

/// Densities implied by the clamp range; other density sources are held to
/// the same range so bonuses stay bounded.
inline constexpr double kDensityMin = (1.0 - kDClampHigh) / kDClampHigh;
inline constexpr double kDensityMax = (1.0 - kDClampLow) / kDClampLow;

struct PseudoCount {
  double count = 0.0;
  long buffer_size = 0;
};

/// N = n * min(1, rho / Z) for an unnormalized density rho.
inline PseudoCount pseudo_count_from_density(double rho, long n, double z) {
  if (n < 1) throw ConfigError("pseudo_count: buffer size must be at least 1");
  if (!(z > 0.0)) throw ConfigError("pseudo_count: normalizer must be positive");
  return {static_cast<double>(n) * std::min(1.0, rho / z), n};
}

inline PseudoCount pseudo_count(double d, long n, double z) {
  return pseudo_count_from_density(density_from_d(d), n, z);
}

/// 1 / (1 + K P(x*)). States missing from the support have P = 0.
template <class Key>
double tabular_optimal_d(const std::map<Key, double>& probs, const Key& exemplar, int k = 1) {
  if (k < 1) throw ConfigError("tabular_optimal_d: K must be at least 1");
  double total = 0.0;
  for (const auto& [_, p] : probs) total += p;
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("tabular_optimal_d: probabilities must sum to 1");
  const auto it = probs.find(exemplar);
  const double p = it == probs.end() ? 0.0 : it->second;
  return 1.0 / (1.0 + k * p);
}

/// Optimal latent discriminator q_pos / (q_pos + q_neg) at z.
template <class Q1, class Q2, class Z>
double analytic_latent_d(Q1&& q_pos, Q2&& q_neg, const Z& z) {
  const double a = q_pos(z);
  const double b = q_neg(z);
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0)
    throw UndefinedPointError("analytic_latent_d: densities must be finite and non-negative");
  if (a + b == 0.0) throw UndefinedPointError("analytic_latent_d: both densities vanish");
  return a / (a + b);
}

/// Isotropic Gaussian density N(x; mean, sigma^2 I).
inline double gaussian_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, double sigma) {
  const double d = static_cast<double>(x.size());
  const double norm = std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.5 * d);
  return norm * std::exp(-0.5 * (x - mean).squaredNorm() / (sigma * sigma));
}

/// Gaussian RBF kernel density estimate with exact normalizer.
template <StatePool Pool>
double kde_density(const Pool& points, const State& query, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("kde_density: bandwidth must be positive");
  if (points.size() == 0) throw EmptyInputError("kde_density: no points");
  double acc = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) acc += gaussian_pdf(query, points[i], sigma);
  return acc / static_cast<double>(points.size());
}

/// Optimal discriminator of the noise-smoothed single-exemplar estimator at
/// its own exemplar: kappa / (kappa + KDE(x*)), kappa = (2 pi sigma^2)^(-d/2).
template <StatePool Pool>
double smoothed_optimal_d(const Pool& points, const State& exemplar, double sigma) {
  const double kappa = std::pow(2.0 * std::numbers::pi * sigma * sigma,
                                -0.5 * static_cast<double>(exemplar.size()));
  return kappa / (kappa + kde_density(points, exemplar, sigma));
}

// ---------------------------------------------------------------------------
// Grids

struct GridSpec {
  double x0 = 0.0, y0 = 0.0;   // lower-left corner
  double dx = 1.0, dy = 1.0;   // cell size
  int nx = 1, ny = 1;

  static GridSpec bounds(double xmin, double ymin, double xmax, double ymax, int nx, int ny) {
    if (nx < 1 || ny < 1 || !(xmax > xmin) || !(ymax > ymin))
      throw ConfigError("grid: invalid bounds or dimensions");
    return {xmin, ymin, (xmax - xmin) / nx, (ymax - ymin) / ny, nx, ny};
  }

  double cell_area() const { return dx * dy; }
  std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  State center(int ix, int iy) const {
    State s(2);
    s << x0 + (ix + 0.5) * dx, y0 + (iy + 0.5) * dy;
    return s;
  }
  /// Cell of a point; out-of-bounds points fall into the nearest edge cell.
  std::pair<int, int> cell_of(const State& p) const {
    const int ix = std::clamp(static_cast<int>(std::floor((p[0] - x0) / dx)), 0, nx - 1);
    const int iy = std::clamp(static_cast<int>(std::floor((p[1] - y0) / dy)), 0, ny - 1);
    return {ix, iy};
  }
};

/// Lattice of density values, row-major with rows along y: value(ix, iy) is
/// values[iy * nx + ix].
struct DensityGrid {
  GridSpec spec;
  std::vector<double> values;
  bool normalized = false;

  double& at(int ix, int iy) { return values[static_cast<std::size_t>(iy) * spec.nx + ix]; }
  double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * spec.nx + ix]; }

  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * spec.cell_area();
  }

  /// Rescales so that sum(values) * cell_area == 1.
  DensityGrid normalize() const {
    const double m = mass();
    if (!(m > 0.0)) throw EmptyInputError("cannot normalize a grid with zero mass");
    DensityGrid g = *this;
    for (double& v : g.values) v /= m;
    g.normalized = true;
    return g;
  }
};

template <class Points>
DensityGrid histogram_density(const Points& points, const GridSpec& spec) {
  if (points.size() == 0) throw EmptyInputError("histogram_density: no points");
  DensityGrid g{spec, std::vector<double>(spec.cells(), 0.0), true};
  const double w = 1.0 / (static_cast<double>(points.size()) * spec.cell_area());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [ix, iy] = spec.cell_of(points[i]);
    g.at(ix, iy) += w;
  }
  return g;
}

/// Evaluates density_from_d at every cell center. `d_at` maps a cell center
/// to a discriminator output; cells are independent and evaluated across
/// `workers` threads.
inline DensityGrid grid_eval(const std::function<double(const State&, std::size_t cell)>& d_at,
                             const GridSpec& spec, bool normalize, int workers = 1) {
  DensityGrid g{spec, std::vector<double>(spec.cells(), 0.0), false};
  parallel_for(spec.cells(), workers, [&](std::size_t c) {
    const int ix = static_cast<int>(c % static_cast<std::size_t>(spec.nx));
    const int iy = static_cast<int>(c / static_cast<std::size_t>(spec.nx));
    g.values[c] = density_from_d(d_at(spec.center(ix, iy), c));
  });
  return normalize ? g.normalize() : g;
}

/// Density grid of an amortized model.
inline DensityGrid grid_eval(const AmortizedLatent& model, const GridSpec& spec, std::uint64_t seed,
                             bool normalize) {
  if (model.state_dim() != 2) throw ConfigError("grid_eval: model is not over a 2-D state space");
  Eigen::MatrixXd centers(2, static_cast<Eigen::Index>(spec.cells()));
  for (int iy = 0; iy < spec.ny; ++iy)
    for (int ix = 0; ix < spec.nx; ++ix) centers.col(iy * spec.nx + ix) = spec.center(ix, iy);
  const Eigen::VectorXd d = model.evaluate(centers, seed);
  DensityGrid g{spec, std::vector<double>(spec.cells()), false};
  for (std::size_t c = 0; c < spec.cells(); ++c) g.values[c] = density_from_d(d[static_cast<Eigen::Index>(c)]);
  return normalize ? g.normalize() : g;
}

/// Density grid from a bank of exemplar discriminators, one per cell center,
/// trained against `buffer`. The bank shares its trunk (K = 1 per head).
template <StatePool Pool>
DensityGrid grid_eval_trained(const Pool& buffer, const GridSpec& spec, const TrainConfig& cfg,
                              const ExemplarArch& arch, bool normalize) {
  if (buffer.size() == 0) throw EmptyInputError("grid_eval: empty buffer");
  std::vector<std::vector<State>> groups;
  groups.reserve(spec.cells());
  for (int iy = 0; iy < spec.ny; ++iy)
    for (int ix = 0; ix < spec.nx; ++ix) groups.push_back({spec.center(ix, iy)});
  const KExemplar bank = train_k(std::move(groups), buffer, cfg, arch);
  const auto d = bank.evaluate_members();
  DensityGrid g{spec, std::vector<double>(spec.cells()), false};
  for (std::size_t c = 0; c < spec.cells(); ++c) g.values[c] = density_from_d(d[c][0]);
  return normalize ? g.normalize() : g;
}

/// Grid of the analytic noise-smoothed estimator (equivalently an RBF KDE).
template <StatePool Pool>
DensityGrid smoothed_grid(const Pool& points, const GridSpec& spec, double sigma, bool normalize) {
  return grid_eval([&](const State& c, std::size_t) { return smoothed_optimal_d(points, c, sigma); },
                   spec, normalize);
}

/// Sum of squared differences between horizontally and vertically adjacent
/// cells.
inline double roughness(const DensityGrid& g) {
  double r = 0.0;
  for (int iy = 0; iy < g.spec.ny; ++iy)
    for (int ix = 0; ix < g.spec.nx; ++ix) {
      if (ix + 1 < g.spec.nx) r += std::pow(g.at(ix + 1, iy) - g.at(ix, iy), 2);
      if (iy + 1 < g.spec.ny) r += std::pow(g.at(ix, iy + 1) - g.at(ix, iy), 2);
    }
  return r;
}

/// Total-variation distance between the cell-mass distributions of two grids
/// over the same lattice.
inline double total_variation(const DensityGrid& a, const DensityGrid& b) {
  if (a.values.size() != b.values.size()) throw ConfigError("total_variation: grid shapes differ");
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    sa += a.values[i];
    sb += b.values[i];
  }
  if (!(sa > 0.0) || !(sb > 0.0)) throw EmptyInputError("total_variation: zero-mass grid");
  double tv = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) tv += std::abs(a.values[i] / sa - b.values[i] / sb);
  return 0.5 * tv;
}

/// Ranks starting at 1; tied values share the mean of their ranks.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson correlation of average ranks). Zero
/// when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("spearman: lengths differ");
  if (x.size() < 2) throw EmptyInputError("spearman: need at least two pairs");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  return sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

// ---------------------------------------------------------------------------
// Export

/// CSV with header `x,y,value`, one row per cell center, rows ordered by y
/// then x.
inline void write_grid_csv(const DensityGrid& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  out << "x,y,value\n";
  for (int iy = 0; iy < g.spec.ny; ++iy)
    for (int ix = 0; ix < g.spec.nx; ++ix) {
      const State c = g.spec.center(ix, iy);
      out << fmt::format("{:.9g},{:.9g},{:.12g}\n", c[0], c[1], g.at(ix, iy));
    }
}

/// Binary 8-bit graymap ("P5\n<w> <h>\n255\n"). Values are min-max scaled;
/// the first image row is the top (largest y) row of the grid.
inline std::string grid_pgm_bytes(const DensityGrid& g) {
  std::string bytes = fmt::format("P5\n{} {}\n255\n", g.spec.nx, g.spec.ny);
  double lo = g.values.empty() ? 0.0 : g.values.front(), hi = lo;
  for (double v : g.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  for (int iy = g.spec.ny - 1; iy >= 0; --iy)
    for (int ix = 0; ix < g.spec.nx; ++ix) {
      const double t = span > 0.0 ? (g.at(ix, iy) - lo) / span : 0.0;
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
  return bytes;
}

inline void write_grid_pgm(const DensityGrid& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  const std::string b = grid_pgm_bytes(g);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace ex2
