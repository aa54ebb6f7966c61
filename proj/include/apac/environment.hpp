#pragma once

// Mean-field game instances: Hamiltonians, terminal costs, interaction costs
// and initial densities.

#include "apac/kde.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace apac {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// ---------------------------------------------------------------- terminal

struct FieldJet {
  double value = 0.0;
  std::vector<double> grad;
  double lap = 0.0;
};

// Scalar field with exact gradient and Laplacian, plus the reverse of that
// map so its derivatives can sit inside a differentiated loss.
class TerminalCost {
 public:
  virtual ~TerminalCost() = default;
  virtual FieldJet evaluate(std::span<const double> x) const = 0;
  // Adds to x_adj the gradient of  adj_value·g + adj_grad·∇g + adj_lap·Δg.
  virtual void pullback(std::span<const double> x, double adj_value,
                        std::span<const double> adj_grad, double adj_lap,
                        std::span<double> x_adj) const = 0;
};

// √(‖x_S − target‖² + ε²) over a subset S of the coordinates.
class SmoothedDistance final : public TerminalCost {
 public:
  SmoothedDistance(std::vector<int> coords, std::vector<double> target, double eps)
      : coords_(std::move(coords)), target_(std::move(target)), eps_(eps) {
    if (coords_.size() != target_.size())
      throw std::invalid_argument("SmoothedDistance: coordinate/target length mismatch");
    if (!(eps_ > 0.0)) throw std::invalid_argument("SmoothedDistance: eps must be positive");
  }

  FieldJet evaluate(std::span<const double> x) const override {
    FieldJet jet;
    jet.grad.assign(x.size(), 0.0);
    const double s = radius(x);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const auto c = static_cast<std::size_t>(coords_[i]);
      jet.grad[c] = (x[c] - target_[i]) / s;
    }
    const double k = static_cast<double>(coords_.size());
    jet.value = s;
    jet.lap = (k - 1.0) / s + eps_ * eps_ / (s * s * s);
    return jet;
  }

  void pullback(std::span<const double> x, double adj_value,
                std::span<const double> adj_grad, double adj_lap,
                std::span<double> x_adj) const override {
    const double s = radius(x);
    const double k = static_cast<double>(coords_.size());
    double a_dot_r = 0.0;
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const auto c = static_cast<std::size_t>(coords_[i]);
      a_dot_r += adj_grad[c] * (x[c] - target_[i]);
    }
    const double s2 = s * s;
    const double lap_slope = -(k - 1.0) / s2 - 3.0 * eps_ * eps_ / (s2 * s2);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const auto c = static_cast<std::size_t>(coords_[i]);
      const double r = x[c] - target_[i];
      x_adj[c] += adj_value * r / s + adj_grad[c] / s - a_dot_r * r / (s2 * s) +
                  adj_lap * lap_slope * r / s;
    }
  }

  double eps() const { return eps_; }

 private:
  double radius(std::span<const double> x) const {
    double sq = eps_ * eps_;
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const double r = x[static_cast<std::size_t>(coords_[i])] - target_[i];
      sq += r * r;
    }
    return std::sqrt(sq);
  }

  std::vector<int> coords_;
  std::vector<double> target_;
  double eps_;
};

// curvature·‖x‖²/2 + offset
class QuadraticBowl final : public TerminalCost {
 public:
  QuadraticBowl(double curvature, double offset) : curvature_(curvature), offset_(offset) {}

  FieldJet evaluate(std::span<const double> x) const override {
    FieldJet jet;
    jet.grad.resize(x.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sq += x[i] * x[i];
      jet.grad[i] = curvature_ * x[i];
    }
    jet.value = 0.5 * curvature_ * sq + offset_;
    jet.lap = curvature_ * static_cast<double>(x.size());
    return jet;
  }

  void pullback(std::span<const double> x, double adj_value,
                std::span<const double> adj_grad, double,
                std::span<double> x_adj) const override {
    for (std::size_t i = 0; i < x.size(); ++i)
      x_adj[i] += curvature_ * (adj_value * x[i] + adj_grad[i]);
  }

 private:
  double curvature_;
  double offset_;
};

// ------------------------------------------------------------- hamiltonian

class Hamiltonian {
 public:
  virtual ~Hamiltonian() = default;
  virtual double value(std::span<const double> x, std::span<const double> p) const = 0;
  // Overwrites dx = ∂H/∂x and dp = ∂H/∂p.
  virtual void gradient(std::span<const double> x, std::span<const double> p,
                        std::span<double> dx, std::span<double> dp) const = 0;
};

// c·√(‖p‖² + ε²) − c·ε, a smoothed c‖p‖ with H(0) = 0.
inline double hamiltonian_norm(double c, std::span<const double> p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("hamiltonian_norm: eps must be positive");
  double sq = 0.0;
  for (double v : p) sq += v * v;
  return c * std::sqrt(sq + eps * eps) - c * eps;
}

class NormHamiltonian final : public Hamiltonian {
 public:
  NormHamiltonian(double speed, double eps) : speed_(speed), eps_(eps) {}

  double value(std::span<const double>, std::span<const double> p) const override {
    return hamiltonian_norm(speed_, p, eps_);
  }

  void gradient(std::span<const double>, std::span<const double> p, std::span<double> dx,
                std::span<double> dp) const override {
    double sq = eps_ * eps_;
    for (double v : p) sq += v * v;
    const double inv = speed_ / std::sqrt(sq);
    for (std::size_t i = 0; i < p.size(); ++i) {
      dp[i] = inv * p[i];
      dx[i] = 0.0;
    }
  }

 private:
  double speed_;
  double eps_;
};

// ‖p‖²/2 − β‖x‖²/2
class HarmonicHamiltonian final : public Hamiltonian {
 public:
  explicit HarmonicHamiltonian(double beta) : beta_(beta) {}

  double value(std::span<const double> x, std::span<const double> p) const override {
    double pp = 0.0, xx = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      pp += p[i] * p[i];
      xx += x[i] * x[i];
    }
    return 0.5 * pp - 0.5 * beta_ * xx;
  }

  void gradient(std::span<const double> x, std::span<const double> p, std::span<double> dx,
                std::span<double> dp) const override {
    for (std::size_t i = 0; i < p.size(); ++i) {
      dp[i] = p[i];
      dx[i] = -beta_ * x[i];
    }
  }

 private:
  double beta_;
};

// Quadcopter state layout (x1,x2,y1,y2,z1,z2,ψ1,ψ2,θ1,θ2,φ1,φ2).
namespace quad {
inline constexpr int state_dim = 12;
inline constexpr std::array<int, 3> spatial{0, 2, 4};
inline constexpr int yaw = 6;
inline constexpr int pitch = 8;
inline constexpr int roll = 10;

// Rotation factors multiplying thrust/m in the three linear accelerations,
// with their derivatives w.r.t. (ψ, θ, φ).
struct Thrust {
  std::array<double, 3> a;
  std::array<std::array<double, 3>, 3> da;  // da[i][angle]
};

inline Thrust thrust_factors(std::span<const double> x) {
  const double sp = std::sin(x[yaw]), cp = std::cos(x[yaw]);
  const double st = std::sin(x[pitch]), ct = std::cos(x[pitch]);
  const double sf = std::sin(x[roll]), cf = std::cos(x[roll]);
  Thrust t;
  t.a = {sf * sp + cf * cp * st, -cp * sf + cf * st * sp, ct * cf};
  t.da[0] = {sf * cp - cf * sp * st, cf * cp * ct, cf * sp - sf * cp * st};
  t.da[1] = {sp * sf + cf * st * cp, cf * ct * sp, -cp * cf - sf * st * sp};
  t.da[2] = {0.0, -st * cf, -ct * sf};
  return t;
}

// Right-hand side h(x, u) with u = (thrust, τψ, τθ, τφ).
inline std::array<double, state_dim> dynamics(std::span<const double> x,
                                              std::span<const double> u, double mass,
                                              double gravity) {
  const Thrust th = thrust_factors(x);
  const double acc = u[0] / mass;
  return {x[1], acc * th.a[0], x[3], acc * th.a[1], x[5], acc * th.a[2] - gravity,
          x[7], u[1],          x[9], u[2],          x[11], u[3]};
}
}  // namespace quad

// Legendre transform of the control-affine dynamics with L(u) = ½‖u‖²:
//   H(x, p) = sup_u { −p·h(x, u) − ½‖u‖² } = −p·f0(x) + ½‖B(x)ᵀp‖².
inline double quadcopter_hamiltonian(std::span<const double> x, std::span<const double> p,
                                     double mass, double gravity) {
  if (x.size() != quad::state_dim || p.size() != quad::state_dim)
    throw std::invalid_argument("quadcopter_hamiltonian: 12-dimensional state expected");
  const quad::Thrust th = quad::thrust_factors(x);
  const double drift = p[0] * x[1] + p[2] * x[3] + p[4] * x[5] - p[5] * gravity +
                       p[6] * x[7] + p[8] * x[9] + p[10] * x[11];
  const double w = (p[1] * th.a[0] + p[3] * th.a[1] + p[5] * th.a[2]) / mass;
  return -drift + 0.5 * (w * w + p[7] * p[7] + p[9] * p[9] + p[11] * p[11]);
}

enum class QuadcopterVariant { derived, paper };

class QuadcopterHamiltonian final : public Hamiltonian {
 public:
  QuadcopterHamiltonian(double mass, double gravity, QuadcopterVariant variant)
      : mass_(mass), gravity_(gravity), variant_(variant) {
    if (!(mass_ > 0.0)) throw std::invalid_argument("QuadcopterHamiltonian: mass must be positive");
  }

  double value(std::span<const double> x, std::span<const double> p) const override {
    if (variant_ == QuadcopterVariant::paper) {
      double pp = 0.0;
      for (double v : p) pp += v * v;
      return 0.5 * pp;
    }
    return quadcopter_hamiltonian(x, p, mass_, gravity_);
  }

  void gradient(std::span<const double> x, std::span<const double> p, std::span<double> dx,
                std::span<double> dp) const override {
    std::fill(dx.begin(), dx.end(), 0.0);
    if (variant_ == QuadcopterVariant::paper) {
      std::copy(p.begin(), p.end(), dp.begin());
      return;
    }
    const quad::Thrust th = quad::thrust_factors(x);
    const double w = (p[1] * th.a[0] + p[3] * th.a[1] + p[5] * th.a[2]) / mass_;
    for (int i : {0, 2, 4, 6, 8, 10}) {
      const auto k = static_cast<std::size_t>(i);
      dp[k] = -x[k + 1];
      dx[k + 1] = -p[k];
    }
    dp[5] += gravity_;
    dp[1] = w * th.a[0] / mass_;
    dp[3] = w * th.a[1] / mass_;
    dp[5] += w * th.a[2] / mass_;
    dp[7] = p[7];
    dp[9] = p[9];
    dp[11] = p[11];
    const std::array<int, 3> angles{quad::yaw, quad::pitch, quad::roll};
    for (std::size_t j = 0; j < 3; ++j)
      dx[static_cast<std::size_t>(angles[j])] =
          w / mass_ * (p[1] * th.da[0][j] + p[3] * th.da[1][j] + p[5] * th.da[2][j]);
  }

  QuadcopterVariant variant() const { return variant_; }

 private:
  double mass_;
  double gravity_;
  QuadcopterVariant variant_;
};

// ---------------------------------------------------------------- obstacles

enum class ObstacleKind { none, twin, bottleneck, symmetric };

namespace detail {
inline void require_planar(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("obstacle_cost: state needs at least 2 coordinates");
}

// Raw (unclamped) obstacle field over (x1, x2) and its planar gradient.
struct Quadric {
  double value;
  std::array<double, 2> grad;
};

inline std::array<Quadric, 2> twin_quadrics(double x1, double x2) {
  const double theta = std::numbers::pi / 5.0;
  const double c = std::cos(theta), s = std::sin(theta);
  // v = (x - center) R with R = [[c, -s], [s, c]]
  auto rotate = [&](double u0, double u1) { return std::array<double, 2>{u0 * c + u1 * s, -u0 * s + u1 * c}; };
  // dF/du_i = Σ_j R_ij dF/dv_j
  auto back = [&](double g0, double g1) { return std::array<double, 2>{c * g0 - s * g1, s * g0 + c * g1}; };
  const auto v = rotate(x1 + 2.0, x2 - 0.5);
  const auto w = rotate(x1 - 2.0, x2 + 0.5);
  return {Quadric{-5.0 * v[0] * v[0] - 2.0 * v[1] - 1.0, back(-10.0 * v[0], -2.0)},
          Quadric{-5.0 * w[0] * w[0] + 2.0 * w[1] - 1.0, back(-10.0 * w[0], 2.0)}};
}

inline Quadric bottleneck_quadric(double x1, double x2) {
  return {-5.0 * x1 * x1 + x2 * x2 - 0.1, {-10.0 * x1, 2.0 * x2}};
}

inline Quadric symmetric_quadric(double x1, double x2) {
  return {-(x1 * x1 + 1.6 * x1 * x2 + x2 * x2) + 0.1,
          {-(2.0 * x1 + 1.6 * x2), -(1.6 * x1 + 2.0 * x2)}};
}
}  // namespace detail

// Nonnegative obstacle penalty; only x1 and x2 enter.
inline double obstacle_cost(ObstacleKind kind, double gamma, std::span<const double> x) {
  detail::require_planar(x);
  switch (kind) {
    case ObstacleKind::none: return 0.0;
    case ObstacleKind::twin: {
      const auto q = detail::twin_quadrics(x[0], x[1]);
      return gamma * (std::max(q[0].value, 0.0) + std::max(q[1].value, 0.0));
    }
    case ObstacleKind::bottleneck:
      return gamma * std::max(detail::bottleneck_quadric(x[0], x[1]).value, 0.0);
    case ObstacleKind::symmetric:
      return gamma * std::max(detail::symmetric_quadric(x[0], x[1]).value, 0.0);
  }
  return 0.0;
}

// Adds the (sub)gradient of obstacle_cost to `grad`; zero where inactive.
inline void obstacle_gradient(ObstacleKind kind, double gamma, std::span<const double> x,
                              std::span<double> grad) {
  detail::require_planar(x);
  auto add = [&](const detail::Quadric& q) {
    if (q.value > 0.0) {
      grad[0] += gamma * q.grad[0];
      grad[1] += gamma * q.grad[1];
    }
  };
  switch (kind) {
    case ObstacleKind::none: break;
    case ObstacleKind::twin:
      for (const auto& q : detail::twin_quadrics(x[0], x[1])) add(q);
      break;
    case ObstacleKind::bottleneck: add(detail::bottleneck_quadric(x[0], x[1])); break;
    case ObstacleKind::symmetric: add(detail::symmetric_quadric(x[0], x[1])); break;
  }
}

// -------------------------------------------------------------- congestion

// 1 / (‖(a1,a2) − (b1,b2)‖² + 1) for one pair.
inline double inverse_square_kernel(std::span<const double> a, std::span<const double> b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1];
  return 1.0 / (d0 * d0 + d1 * d1 + 1.0);
}

inline double gaussian_kernel_scale(double gamma_cong) {
  return gamma_cong / std::pow(2.0 * std::numbers::pi, 1.5);
}

// γ(2π)^(-3/2) exp(−½‖Δ(x,y,z)‖²) on the quadcopter spatial slots.
inline double gaussian_spatial_kernel(std::span<const double> a, std::span<const double> b,
                                      double gamma_cong) {
  double sq = 0.0;
  for (int c : quad::spatial) {
    const double d = a[static_cast<std::size_t>(c)] - b[static_cast<std::size_t>(c)];
    sq += d * d;
  }
  return gaussian_kernel_scale(gamma_cong) * std::exp(-0.5 * sq);
}

// Mean over paired columns of the inverse-square kernel on (x1, x2).
inline double congestion_estimate(const Matrix& batch_a, const Matrix& batch_b) {
  if (batch_a.rows() != batch_b.rows() || batch_a.cols() != batch_b.cols())
    throw std::invalid_argument("congestion_estimate: batch size mismatch");
  if (batch_a.rows() < 2) throw std::invalid_argument("congestion_estimate: need 2 coordinates");
  double total = 0.0;
  for (Eigen::Index j = 0; j < batch_a.cols(); ++j)
    total += inverse_square_kernel({batch_a.col(j).data(), 2}, {batch_b.col(j).data(), 2});
  return total / static_cast<double>(batch_a.cols());
}

inline double gaussian_congestion(const Matrix& batch_a, const Matrix& batch_b,
                                  double gamma_cong) {
  if (batch_a.rows() != quad::state_dim || batch_b.rows() != quad::state_dim)
    throw std::invalid_argument("gaussian_congestion: 12-dimensional quadcopter layout expected");
  if (batch_a.cols() != batch_b.cols())
    throw std::invalid_argument("gaussian_congestion: batch size mismatch");
  double total = 0.0;
  for (Eigen::Index j = 0; j < batch_a.cols(); ++j)
    total += gaussian_spatial_kernel({batch_a.col(j).data(), quad::state_dim},
                                     {batch_b.col(j).data(), quad::state_dim}, gamma_cong);
  return total / static_cast<double>(batch_a.cols());
}

inline constexpr double density_floor = 1e-300;

// γ·ln(max{ρ̂(q), floor}) per query column.
inline RowVector entropy_interaction(const Matrix& query, const KdeEstimator& kde, double gamma) {
  RowVector out = RowVector::Zero(query.cols());
  if (gamma == 0.0) return out;
  if (gamma < 0.0) throw std::invalid_argument("entropy_interaction: gamma must be >= 0");
  const double log_floor = std::log(density_floor);
  for (Eigen::Index j = 0; j < query.cols(); ++j) {
    const double lr = kde.log_density({query.col(j).data(), static_cast<std::size_t>(query.rows())});
    out(j) = gamma * std::max(lr, log_floor);
  }
  return out;
}

// ---------------------------------------------------------- initial density

struct GaussianDensity {
  std::vector<double> center;
  std::vector<double> stddev;  // per coordinate; zero pins a coordinate
};

struct BatchSample {
  Matrix z;       // d × B
  RowVector t;    // 1 × B
};

// --------------------------------------------------------------- instances

enum class PairInteraction { none, inverse_square, gaussian_spatial };

struct Environment {
  std::string name;
  int dim = 2;
  double nu = 0.0;
  double horizon = 1.0;
  double speed_c = 0.0;
  std::shared_ptr<const Hamiltonian> hamiltonian;
  std::shared_ptr<const TerminalCost> terminal;
  GaussianDensity rho0;
  ObstacleKind obstacle = ObstacleKind::none;
  double gamma_obst = 0.0;
  PairInteraction pair = PairInteraction::none;
  double gamma_pair = 0.0;
  double entropy_gamma = 0.0;   // f = γ ln ρ̂ when positive
  double kde_scale = 1.0;       // σ in the KDE kernel width hσ

  bool needs_partner() const { return pair != PairInteraction::none; }
  bool needs_kde() const { return entropy_gamma > 0.0; }
};

inline BatchSample sample_batch(const Environment& env, int batch, std::mt19937_64& rng) {
  if (batch < 1) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  BatchSample s{Matrix(env.dim, batch), RowVector(batch)};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < batch; ++j)
    for (int i = 0; i < env.dim; ++i) {
      const auto k = static_cast<std::size_t>(i);
      s.z(i, j) = env.rho0.center[k] + env.rho0.stddev[k] * normal(rng);
    }
  std::uniform_real_distribution<double> uniform(0.0, env.horizon);
  for (int j = 0; j < batch; ++j) s.t(j) = uniform(rng);
  return s;
}

inline Matrix sample_initial(const Environment& env, int count, std::mt19937_64& rng) {
  Matrix z(env.dim, count);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < env.dim; ++i) {
      const auto k = static_cast<std::size_t>(i);
      z(i, j) = env.rho0.center[k] + env.rho0.stddev[k] * normal(rng);
    }
  return z;
}

// Per-sample context for the population-dependent part of f.
struct InteractionInputs {
  const Matrix* partner = nullptr;                  // second batch, detached
  const std::vector<KdeEstimator>* kde = nullptr;   // one estimator per sample
};

// f(x_b) for every column of x. When `grad` is given it receives ∂f/∂x_b with
// the partner batch and KDE samples held fixed.
inline RowVector interaction_values(const Environment& env, const Matrix& x,
                                    const InteractionInputs& in, Matrix* grad = nullptr) {
  const auto batch = x.cols();
  const auto d = static_cast<std::size_t>(x.rows());
  RowVector f = RowVector::Zero(batch);
  if (grad) *grad = Matrix::Zero(x.rows(), batch);
  if (env.needs_partner() && (!in.partner || in.partner->cols() != batch))
    throw std::invalid_argument("interaction_values: partner batch required");
  if (env.needs_kde() && (!in.kde || static_cast<Eigen::Index>(in.kde->size()) != batch))
    throw std::invalid_argument("interaction_values: per-sample KDE required");
  std::vector<double> g(d);
  const double log_floor = std::log(density_floor);

  for (Eigen::Index j = 0; j < batch; ++j) {
    std::span<const double> xj(x.col(j).data(), d);
    std::fill(g.begin(), g.end(), 0.0);
    double v = 0.0;
    if (env.obstacle != ObstacleKind::none) {
      v += obstacle_cost(env.obstacle, env.gamma_obst, xj);
      obstacle_gradient(env.obstacle, env.gamma_obst, xj, g);
    }
    if (env.pair == PairInteraction::inverse_square) {
      std::span<const double> yj(in.partner->col(j).data(), d);
      const double k = inverse_square_kernel(xj, yj);
      v += env.gamma_pair * k;
      for (std::size_t c = 0; c < 2; ++c) g[c] -= env.gamma_pair * 2.0 * (xj[c] - yj[c]) * k * k;
    } else if (env.pair == PairInteraction::gaussian_spatial) {
      std::span<const double> yj(in.partner->col(j).data(), d);
      const double k = gaussian_spatial_kernel(xj, yj, env.gamma_pair);
      v += k;
      for (int c : quad::spatial) {
        const auto u = static_cast<std::size_t>(c);
        g[u] -= (xj[u] - yj[u]) * k;
      }
    }
    if (env.needs_kde()) {
      std::vector<double> lg(d);
      const double lr = (*in.kde)[static_cast<std::size_t>(j)].log_density_gradient(xj, lg);
      if (lr > log_floor) {
        v += env.entropy_gamma * lr;
        for (std::size_t c = 0; c < d; ++c) g[c] += env.entropy_gamma * lg[c];
      } else {
        v += env.entropy_gamma * log_floor;
      }
    }
    f(j) = v;
    if (grad)
      for (std::size_t c = 0; c < d; ++c) (*grad)(static_cast<Eigen::Index>(c), j) = g[c];
  }
  return f;
}

}  // namespace apac
