#pragma once

#include "apac/apac.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace apac::check {

// 1×1 node holding value(row, col) of `node`, with the matching pullback.
inline NodeId pick(Tape& tape, NodeId node, int row, int col) {
  Matrix v(1, 1);
  v(0, 0) = tape.value(node)(row, col);
  auto pullback = [row, col](const Matrix& g, std::span<Matrix* const> adj) {
    if (adj[0]) (*adj[0])(row, col) += g(0, 0);
  };
  return tape.custom({node}, std::move(v), ad::Channels::plain(), 1, std::move(pullback));
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double second_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

// |a − b| / |b|, falling back to the absolute error when |b| is below `floor`.
inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

// Value network with nonzero biases so every code path is exercised.
inline NetworkParams random_value_net(int dim, std::uint64_t seed, int width = 100,
                                      int hidden_layers = 3) {
  NetworkParams p = init_params(ResNetConfig::value_net(dim, width, hidden_layers), Role::value, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const LayerShape& s : p.layers())
    for (int r = 0; r < s.rows; ++r) p.data[s.bias_offset + static_cast<std::size_t>(r)] = u(rng);
  return p;
}

inline NetworkParams random_generator(int dim, std::uint64_t seed, int width = 100,
                                      int hidden_layers = 3) {
  NetworkParams p = init_params(ResNetConfig::generator(dim, width, hidden_layers), Role::generator, seed);
  std::mt19937_64 rng(seed ^ 0xfeedULL);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const LayerShape& s : p.layers())
    for (int r = 0; r < s.rows; ++r) p.data[s.bias_offset + static_cast<std::size_t>(r)] = u(rng);
  return p;
}

inline std::vector<double> random_point(int dim, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (double& v : x) v = u(rng);
  return x;
}

inline Matrix column(std::span<const double> x) {
  Matrix m(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = x[i];
  return m;
}

// Independent extended-precision forward pass of a network, used as the
// finite-difference oracle (64-bit second differences at h = 1e-4 carry
// roundoff near 1e-8 absolute, too coarse for small Laplacians).
inline std::vector<long double> reference_forward(const NetworkParams& p,
                                                  const std::vector<long double>& input) {
  const auto shapes = p.layers();
  auto layer = [&](const LayerShape& s, const std::vector<long double>& x) {
    std::vector<long double> y(static_cast<std::size_t>(s.rows));
    for (int r = 0; r < s.rows; ++r) {
      long double acc = p.data[s.bias_offset + static_cast<std::size_t>(r)];
      for (int c = 0; c < s.cols; ++c)
        acc += static_cast<long double>(
                   p.data[s.weight_offset + static_cast<std::size_t>(r) * static_cast<std::size_t>(s.cols) +
                          static_cast<std::size_t>(c)]) *
               x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
  };
  auto act = [&](std::vector<long double> v) {
    for (auto& e : v)
      e = p.config.activation == ad::Activation::tanh ? std::tanh(e) : (e > 0 ? e : 0.0L);
    return v;
  };
  std::vector<long double> h = act(layer(shapes[0], input));
  for (std::size_t k = 1; k + 1 < shapes.size(); ++k) {
    const auto branch = act(layer(shapes[k], h));
    for (std::size_t i = 0; i < h.size(); ++i)
      h[i] += static_cast<long double>(p.config.skip_weight) * branch[i];
  }
  return layer(shapes.back(), h);
}

// φ(x, t) through the wrapper, values only.
inline double phi_value(const NetworkParams& p, const TerminalCost& g, std::span<const double> x,
                        double t, double horizon = 1.0) {
  Tape tape;
  const NetworkLeaves leaves = register_params(tape, p, false);
  const ValueModel model{&p, &leaves, std::nullopt};
  const NodeId phi = value_eval(tape, model, g, tape.constant(column(x)), RowVector::Constant(1, t),
                                horizon, false);
  return tape.value(phi)(0, 0);
}

// sup_u { −p·h(x, u) − ½‖u‖² } by nested grid search over the four controls,
// evaluating the full nonlinear dynamics. Each level scans 11 points per axis
// and recentres on the best point with a window of one previous spacing.
inline double brute_force_quadcopter_h(std::span<const double> x, std::span<const double> p,
                                       double mass, double gravity) {
  std::array<double, 4> centre{0.0, 0.0, 0.0, 0.0};
  double half = 20.0;
  double best = -std::numeric_limits<double>::infinity();
  constexpr int n = 11;
  for (int level = 0; level < 9; ++level) {
    const double step = 2.0 * half / (n - 1);
    std::array<double, 4> arg = centre;
    std::array<double, 4> u{};
    for (int i0 = 0; i0 < n; ++i0)
      for (int i1 = 0; i1 < n; ++i1)
        for (int i2 = 0; i2 < n; ++i2)
          for (int i3 = 0; i3 < n; ++i3) {
            u = {centre[0] - half + i0 * step, centre[1] - half + i1 * step,
                 centre[2] - half + i2 * step, centre[3] - half + i3 * step};
            const auto h = quad::dynamics(x, u, mass, gravity);
            double v = -0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] + u[3] * u[3]);
            for (int k = 0; k < quad::state_dim; ++k) v -= p[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(k)];
            if (v > best) {
              best = v;
              arg = u;
            }
          }
    centre = arg;
    half = step;
  }
  return best;
}

// Generator whose network reproduces z exactly, so G(z, t) = z for all t:
// relu(z) − relu(−z) through the first and last layers, residual blocks off.
inline NetworkParams identity_generator(int dim, int width = 100, int hidden_layers = 3) {
  NetworkParams p = init_params(ResNetConfig::generator(dim, width, hidden_layers), Role::generator, 0);
  std::fill(p.data.begin(), p.data.end(), 0.0);
  const auto shapes = p.layers();
  const LayerShape& in = shapes.front();
  const LayerShape& out = shapes.back();
  for (int i = 0; i < dim; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const auto cols = static_cast<std::size_t>(in.cols);
    p.data[in.weight_offset + u * cols + u] = 1.0;
    p.data[in.weight_offset + (u + static_cast<std::size_t>(dim)) * cols + u] = -1.0;
    const auto ocols = static_cast<std::size_t>(out.cols);
    p.data[out.weight_offset + u * ocols + u] = 1.0;
    p.data[out.weight_offset + u * ocols + u + static_cast<std::size_t>(dim)] = -1.0;
  }
  return p;
}

}  // namespace apac::check
