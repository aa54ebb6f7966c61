#pragma once

// Residual networks for the value function and the generator, and the
// wrappers that pin the terminal and initial conditions:
//
//   φ(x, t) = (1 − s) N_ω(x, t) + s g(x)
//   G(z, t) = (1 − s) z + s N_θ(z, t),      s = t / T

#include "apac/autodiff.hpp"
#include "apac/environment.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace apac {

using ad::NodeId;
using ad::Tape;

enum class Role : std::uint8_t { value, generator };

struct ResNetConfig {
  int input_dim = 3;
  int width = 100;
  int hidden_layers = 3;
  double skip_weight = 0.5;
  ad::Activation activation = ad::Activation::tanh;
  int output_dim = 1;

  static ResNetConfig value_net(int dim, int width = 100, int hidden_layers = 3) {
    return {dim + 1, width, hidden_layers, 0.5, ad::Activation::tanh, 1};
  }
  static ResNetConfig generator(int dim, int width = 100, int hidden_layers = 3) {
    return {dim + 1, width, hidden_layers, 0.5, ad::Activation::relu, dim};
  }
};

struct LayerShape {
  int rows = 0;
  int cols = 0;
  std::size_t weight_offset = 0;  // row-major rows × cols
  std::size_t bias_offset = 0;    // rows
};

// Input layer, hidden_layers − 1 residual blocks, linear output layer.
inline std::vector<LayerShape> layer_shapes(const ResNetConfig& cfg) {
  if (cfg.hidden_layers < 1 || cfg.width < 1 || cfg.input_dim < 1 || cfg.output_dim < 1)
    throw std::invalid_argument("ResNetConfig: dimensions must be positive");
  std::vector<LayerShape> shapes;
  std::size_t offset = 0;
  auto add = [&](int rows, int cols) {
    LayerShape s{rows, cols, offset, offset + static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)};
    offset = s.bias_offset + static_cast<std::size_t>(rows);
    shapes.push_back(s);
  };
  add(cfg.width, cfg.input_dim);
  for (int k = 1; k < cfg.hidden_layers; ++k) add(cfg.width, cfg.width);
  add(cfg.output_dim, cfg.width);
  return shapes;
}

inline std::size_t parameter_count(const ResNetConfig& cfg) {
  const auto shapes = layer_shapes(cfg);
  return shapes.back().bias_offset + static_cast<std::size_t>(shapes.back().rows);
}

struct NetworkParams {
  Role role = Role::value;
  ResNetConfig config;
  std::vector<double> data;

  std::vector<LayerShape> layers() const { return layer_shapes(config); }

  Matrix weight(const LayerShape& s) const {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(data.data() + s.weight_offset, s.rows, s.cols);
  }
  Matrix bias(const LayerShape& s) const {
    return Eigen::Map<const Eigen::VectorXd>(data.data() + s.bias_offset, s.rows);
  }
};

// Weights uniform in ±√(1/fan_in), biases zero.
inline NetworkParams init_params(const ResNetConfig& cfg, Role role, std::uint64_t seed) {
  NetworkParams p{role, cfg, std::vector<double>(parameter_count(cfg), 0.0)};
  std::mt19937_64 rng(seed);
  for (const LayerShape& s : p.layers()) {
    const double bound = std::sqrt(1.0 / s.cols);
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t n = static_cast<std::size_t>(s.rows) * static_cast<std::size_t>(s.cols);
    for (std::size_t i = 0; i < n; ++i) p.data[s.weight_offset + i] = dist(rng);
  }
  return p;
}

struct NetworkLeaves {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

inline NetworkLeaves register_params(Tape& tape, const NetworkParams& params, bool trainable) {
  NetworkLeaves leaves;
  for (const LayerShape& s : params.layers()) {
    leaves.weights.push_back(tape.parameter(params.weight(s), trainable));
    leaves.biases.push_back(tape.parameter(params.bias(s), trainable));
  }
  return leaves;
}

inline NodeId forward(Tape& tape, const NetworkParams& params, const NetworkLeaves& leaves,
                      NodeId input) {
  const auto act = params.config.activation;
  NodeId h = tape.activation(act, tape.affine(leaves.weights[0], leaves.biases[0], input));
  const std::size_t last = leaves.weights.size() - 1;
  for (std::size_t k = 1; k < last; ++k) {
    const NodeId branch = tape.activation(act, tape.affine(leaves.weights[k], leaves.biases[k], h));
    h = tape.residual(h, branch, params.config.skip_weight);
  }
  return tape.affine(leaves.weights[last], leaves.biases[last], h);
}

// Flattened gradient in the parameter layout of `params`.
inline std::vector<double> flatten_gradient(const Tape::Gradients& grads,
                                            const NetworkLeaves& leaves,
                                            const NetworkParams& params) {
  std::vector<double> out(params.data.size(), 0.0);
  const auto shapes = params.layers();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const LayerShape& s = shapes[l];
    const Matrix& gw = grads.at(leaves.weights[l]);
    for (int r = 0; r < s.rows; ++r)
      for (int c = 0; c < s.cols; ++c)
        out[s.weight_offset + static_cast<std::size_t>(r) * static_cast<std::size_t>(s.cols) +
            static_cast<std::size_t>(c)] = gw(r, c);
    const Matrix& gb = grads.at(leaves.biases[l]);
    for (int r = 0; r < s.rows; ++r) out[s.bias_offset + static_cast<std::size_t>(r)] = gb(r, 0);
  }
  return out;
}

// curvature·‖x‖²/2 over the leading `spatial` rows of an (augmented) input.
// Stands in for N_ω when the value function is replaced by a closed form.
inline NodeId closed_form_quadratic(Tape& tape, NodeId input, int spatial, double curvature) {
  const Matrix& in = tape.value(input);
  const ad::Channels ch = tape.channels(input);
  const int b = tape.batch(input);
  Matrix out = Matrix::Zero(1, in.cols());
  for (int i = 0; i < spatial; ++i) {
    const auto xi = in.row(i).leftCols(b).array();
    out.leftCols(b).array() += 0.5 * curvature * xi.square();
    for (int k = 0; k < ch.jac; ++k)
      out.middleCols((1 + k) * b, b).array() +=
          curvature * xi * in.row(i).middleCols((1 + k) * b, b).array();
    if (ch.lap) {
      const int lc = (1 + ch.jac) * b;
      auto lap = out.middleCols(lc, b).array();
      lap += curvature * xi * in.row(i).middleCols(lc, b).array();
      for (int k = 0; k < ch.spatial; ++k)
        lap += curvature * in.row(i).middleCols((1 + k) * b, b).array().square();
    }
  }
  auto pullback = [&tape, input, spatial, curvature, ch, b](
                      const Matrix& g, std::span<Matrix* const> adj) {
    Matrix* gin = adj[0];
    if (!gin) return;
    const Matrix& x = tape.value(input);
    for (int i = 0; i < spatial; ++i) {
      const auto xi = x.row(i).leftCols(b).array();
      Eigen::ArrayXXd gx = curvature * xi * g.row(0).leftCols(b).array();
      for (int k = 0; k < ch.jac; ++k) {
        const auto gk = g.row(0).middleCols((1 + k) * b, b).array();
        gx += curvature * gk * x.row(i).middleCols((1 + k) * b, b).array();
        gin->row(i).middleCols((1 + k) * b, b).array() += curvature * gk * xi;
      }
      if (ch.lap) {
        const int lc = (1 + ch.jac) * b;
        const auto gl = g.row(0).middleCols(lc, b).array();
        gx += curvature * gl * x.row(i).middleCols(lc, b).array();
        gin->row(i).middleCols(lc, b).array() += curvature * gl * xi;
        for (int k = 0; k < ch.spatial; ++k)
          gin->row(i).middleCols((1 + k) * b, b).array() +=
              2.0 * curvature * gl * x.row(i).middleCols((1 + k) * b, b).array();
      }
      gin->row(i).leftCols(b).array() += gx;
    }
  };
  return tape.custom({input}, std::move(out), ch, b, std::move(pullback));
}

// The value network N_ω, or a closed-form quadratic standing in for it.
struct ValueModel {
  const NetworkParams* params = nullptr;
  const NetworkLeaves* leaves = nullptr;
  std::optional<double> closed_form_curvature;
};

namespace detail {
inline RowVector time_fraction(const RowVector& t, double horizon) { return t / horizon; }
}  // namespace detail

// φ = (1 − s)N + s·g at x (a d × B node, possibly produced by the generator)
// and the times t. With `augmented`, the node carries ∂tφ, ∇xφ and Δxφ.
inline NodeId value_eval(Tape& tape, const ValueModel& model, const TerminalCost& terminal,
                         NodeId x, const RowVector& t, double horizon, bool augmented) {
  const int d = static_cast<int>(tape.value(x).rows());
  const int b = tape.batch(x);
  if (t.size() != b) throw std::invalid_argument("value_eval: time row must match batch");
  NodeId input = tape.concat_rows(x, tape.constant(t));
  if (augmented) input = tape.augment(input, d);
  const NodeId net = model.closed_form_curvature
                         ? closed_form_quadratic(tape, input, d, *model.closed_form_curvature)
                         : forward(tape, *model.params, *model.leaves, input);

  const ad::Channels ch = tape.channels(net);
  const RowVector s = detail::time_fraction(t, horizon);
  const Matrix xs = tape.value(x);
  const Matrix& nv = tape.value(net);

  std::vector<FieldJet> jets(static_cast<std::size_t>(b));
  Matrix out(1, nv.cols());
  for (int j = 0; j < b; ++j) {
    const FieldJet& g = jets[static_cast<std::size_t>(j)] =
        terminal.evaluate({xs.col(j).data(), static_cast<std::size_t>(d)});
    const double sj = s(j);
    out(0, j) = (1.0 - sj) * nv(0, j) + sj * g.value;
    if (ch.jac > 0) {
      for (int k = 0; k < d; ++k)
        out(0, (1 + k) * b + j) = (1.0 - sj) * nv(0, (1 + k) * b + j) + sj * g.grad[static_cast<std::size_t>(k)];
      const int tc = (1 + d) * b + j;
      out(0, tc) = (g.value - nv(0, j)) / horizon + (1.0 - sj) * nv(0, tc);
    }
    if (ch.lap) {
      const int lc = (1 + ch.jac) * b + j;
      out(0, lc) = (1.0 - sj) * nv(0, lc) + sj * g.lap;
    }
  }

  auto pullback = [&terminal, xs, s, ch, b, d, horizon](const Matrix& g,
                                                       std::span<Matrix* const> adj) {
    Matrix* gn = adj[0];
    Matrix* gx = adj[1];
    std::vector<double> adj_grad(static_cast<std::size_t>(d));
    for (int j = 0; j < b; ++j) {
      const double sj = s(j);
      const double gv = g(0, j);
      const double gt = ch.jac > 0 ? g(0, (1 + d) * b + j) : 0.0;
      const double gl = ch.lap ? g(0, (1 + ch.jac) * b + j) : 0.0;
      if (gn) {
        (*gn)(0, j) += (1.0 - sj) * gv - gt / horizon;
        for (int k = 0; k < ch.jac; ++k) (*gn)(0, (1 + k) * b + j) += (1.0 - sj) * g(0, (1 + k) * b + j);
        if (ch.lap) (*gn)(0, (1 + ch.jac) * b + j) += (1.0 - sj) * gl;
      }
      if (gx) {
        for (int k = 0; k < d; ++k)
          adj_grad[static_cast<std::size_t>(k)] = ch.jac > 0 ? sj * g(0, (1 + k) * b + j) : 0.0;
        std::span<double> out_col(gx->col(j).data(), static_cast<std::size_t>(d));
        terminal.pullback({xs.col(j).data(), static_cast<std::size_t>(d)}, sj * gv + gt / horizon,
                          adj_grad, sj * gl, out_col);
      }
    }
  };
  return tape.custom({net, x}, std::move(out), ch, b, std::move(pullback));
}

// G = (1 − s)z + s·N_θ(z, t); z is a d × B node.
inline NodeId generator_eval(Tape& tape, const NetworkParams& params, const NetworkLeaves& leaves,
                             NodeId z, const RowVector& t, double horizon) {
  const int b = tape.batch(z);
  if (t.size() != b) throw std::invalid_argument("generator_eval: time row must match batch");
  const NodeId input = tape.concat_rows(z, tape.constant(t));
  const NodeId net = forward(tape, params, leaves, input);
  const RowVector s = detail::time_fraction(t, horizon);
  const RowVector keep = RowVector::Ones(b) - s;
  return tape.column_blend(z, net, keep, s);
}

// Generator push-forward without gradient bookkeeping.
inline Matrix generate(const NetworkParams& params, const Matrix& z, const RowVector& t,
                       double horizon) {
  Tape tape;
  const NetworkLeaves leaves = register_params(tape, params, false);
  return tape.value(generator_eval(tape, params, leaves, tape.constant(z), t, horizon));
}

// Single-point conveniences.
inline ad::AugState value_eval_point(const NetworkParams& params, const TerminalCost& terminal,
                                     std::span<const double> x, double t, double horizon = 1.0) {
  Tape tape;
  const NetworkLeaves leaves = register_params(tape, params, false);
  const Matrix xm = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const ValueModel model{&params, &leaves, std::nullopt};
  const NodeId phi = value_eval(tape, model, terminal, tape.constant(xm),
                                RowVector::Constant(1, t), horizon, true);
  return tape.aug_state(phi, 0, 0);
}

inline std::vector<double> generator_eval_point(const NetworkParams& params,
                                                std::span<const double> z, double t,
                                                double horizon = 1.0) {
  const Matrix zm = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  const Matrix g = generate(params, zm, RowVector::Constant(1, t), horizon);
  return {g.data(), g.data() + g.size()};
}

}  // namespace apac
