#pragma once

// Closed-form stationary solution of the log-interaction MFG with harmonic
// Hamiltonian, error metrics, and validation point sets.

#include "apac/autodiff.hpp"
#include "apac/kde.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace apac {

// H(x, p) = ‖p‖²/2 − β‖x‖²/2, f = γ ln ρ.
struct AnalyticSolution {
  double gamma = 0.0;
  double nu = 1.0;
  double beta = 1.0;
  int dim = 2;

  AnalyticSolution() = default;
  AnalyticSolution(double gamma_, double nu_, double beta_, int dim_)
      : gamma(gamma_), nu(nu_), beta(beta_), dim(dim_) {
    if (gamma < 0.0 || !(nu > 0.0) || !(beta > 0.0) || dim < 1)
      throw std::invalid_argument("AnalyticSolution: need gamma >= 0, nu > 0, beta > 0, dim >= 1");
  }

  double alpha() const {
    return (-gamma + std::sqrt(gamma * gamma + 4.0 * nu * nu * beta)) / (2.0 * nu);
  }

  // φ(x, t) = α‖x‖²/2 − rate·t
  double rate() const {
    const double a = alpha();
    const double d = dim;
    return nu * d * a + 0.5 * gamma * d * std::log(a / (2.0 * std::numbers::pi * nu));
  }

  // ρ is a centred Gaussian with this per-coordinate variance.
  double variance() const { return nu / alpha(); }
};

inline std::pair<double, double> analytic_phi_rho(const AnalyticSolution& sol,
                                                  std::span<const double> x, double t) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double a = sol.alpha();
  const double phi = 0.5 * a * sq - sol.rate() * t;
  const double rho = std::pow(a / (2.0 * std::numbers::pi * sol.nu), 0.5 * sol.dim) *
                     std::exp(-a * sq / (2.0 * sol.nu));
  return {phi, rho};
}

inline double analytic_log_rho(const AnalyticSolution& sol, std::span<const double> x) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double a = sol.alpha();
  return 0.5 * sol.dim * std::log(a / (2.0 * std::numbers::pi * sol.nu)) - a * sq / (2.0 * sol.nu);
}

// φ with its exact time derivative, spatial gradient and Laplacian.
inline ad::AugState analytic_aug_state(const AnalyticSolution& sol, std::span<const double> x,
                                       double t) {
  const double a = sol.alpha();
  ad::AugState s;
  s.value = analytic_phi_rho(sol, x, t).first;
  s.jac.resize(x.size() + 1);
  for (std::size_t i = 0; i < x.size(); ++i) s.jac[i] = a * x[i];
  s.jac[x.size()] = -sol.rate();
  s.lap = a * static_cast<double>(x.size());
  return s;
}

// ‖pred − truth‖₂ / ‖truth‖₂
inline double relative_error(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("relative_error: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    num += e * e;
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw std::invalid_argument("relative_error: truth is identically zero");
  return std::sqrt(num / den);
}

enum class ValidationMode { grid2d, samples };

inline constexpr int validation_grid_side = 32;
inline constexpr int validation_time_levels = 16;
inline constexpr int validation_sample_count = 4096;

struct ValidationPoints {
  Eigen::MatrixXd x;                // d × N
  Eigen::RowVectorXd t;             // 1 × N
  std::vector<double> time_levels;  // distinct times, ascending
  std::vector<int> level;           // time level index of each point

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

inline std::vector<double> uniform_levels(int count, double lo, double hi) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (count - 1);
  return out;
}

// grid2d: 32 × 32 lattice on [−2, 2]² (endpoints included) at 16 times on
// [0, 1]. samples: 4096 draws from ρ0 = N(0, ν/α), 256 per time level.
inline ValidationPoints build_validation_points(const AnalyticSolution& sol, ValidationMode mode,
                                                std::uint64_t seed = 0) {
  ValidationPoints pts;
  pts.time_levels = uniform_levels(validation_time_levels, 0.0, 1.0);
  if (mode == ValidationMode::grid2d) {
    if (sol.dim != 2) throw std::invalid_argument("build_validation_points: grid2d requires d = 2");
    const auto axis = uniform_levels(validation_grid_side, -2.0, 2.0);
    const int n = validation_grid_side * validation_grid_side * validation_time_levels;
    pts.x.resize(2, n);
    pts.t.resize(n);
    pts.level.resize(static_cast<std::size_t>(n));
    int col = 0;
    for (int l = 0; l < validation_time_levels; ++l)
      for (int i = 0; i < validation_grid_side; ++i)
        for (int j = 0; j < validation_grid_side; ++j, ++col) {
          pts.x(0, col) = axis[static_cast<std::size_t>(i)];
          pts.x(1, col) = axis[static_cast<std::size_t>(j)];
          pts.t(col) = pts.time_levels[static_cast<std::size_t>(l)];
          pts.level[static_cast<std::size_t>(col)] = l;
        }
    return pts;
  }
  const int n = validation_sample_count;
  const int per_level = n / validation_time_levels;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sol.variance()));
  pts.x.resize(sol.dim, n);
  pts.t.resize(n);
  pts.level.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    for (int i = 0; i < sol.dim; ++i) pts.x(i, c) = normal(rng);
    const int l = c / per_level;
    pts.t(c) = pts.time_levels[static_cast<std::size_t>(l)];
    pts.level[static_cast<std::size_t>(c)] = l;
  }
  return pts;
}

}  // namespace apac
