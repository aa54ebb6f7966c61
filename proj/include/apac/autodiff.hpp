#pragma once

// Batched reverse-mode tape over an augmented forward pass.
//
// Every node holds a dense matrix. Augmented nodes pack, for each of B
// samples, the value, the Jacobian with respect to the network inputs and the
// spatial Laplacian as column blocks:
//
//   [ value (B) | jac_0 (B) | ... | jac_{J-1} (B) | lap (B) ]
//
// Rows are units of a layer. The first `spatial` Jacobian entries are the
// coordinates that enter the Laplacian; the remaining entry is time.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace apac::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using NodeId = int;

enum class Activation : std::uint8_t { tanh, relu };

struct ActivationDerivatives {
  double value;
  double d1;
  double d2;
  double d3;
};

// relu uses the right-derivative convention at the kink, so d1(0) = 0.
inline ActivationDerivatives activation_derivatives(Activation kind, double v) {
  if (kind == Activation::tanh) {
    const double s = std::tanh(v);
    const double d1 = 1.0 - s * s;
    const double d2 = -2.0 * s * d1;
    const double d3 = -2.0 * (d1 * d1 + s * d2);
    return {s, d1, d2, d3};
  }
  if (v > 0.0) return {v, 1.0, 0.0, 0.0};
  return {0.0, 0.0, 0.0, 0.0};
}

inline const char* activation_name(Activation kind) {
  return kind == Activation::tanh ? "tanh" : "relu";
}

struct Channels {
  int spatial = 0;
  int jac = 0;
  bool lap = false;

  int count() const { return 1 + jac + (lap ? 1 : 0); }
  bool augmented() const { return jac > 0 || lap; }

  static Channels plain() { return {}; }
  // d spatial coordinates plus time.
  static Channels augmented(int spatial_dim) {
    return {spatial_dim, spatial_dim + 1, true};
  }

  friend bool operator==(const Channels&, const Channels&) = default;
};

// A scalar field value with its input derivatives at one point.
struct AugState {
  double value = 0.0;
  std::vector<double> jac;  // spatial entries first, time last
  double lap = 0.0;
};

class Tape {
 public:
  // Adds the local contribution of a node to the adjoints of its inputs.
  // Entries of `input_adjoints` are null for inputs that need no gradient.
  using Pullback = std::function<void(const Matrix& output_adjoint,
                                      std::span<Matrix* const> input_adjoints)>;

  using Gradients = std::map<NodeId, Matrix>;

  NodeId parameter(Matrix value, bool trainable = true) {
    const int b = static_cast<int>(value.cols());
    return push({.op = Op::parameter,
                 .value = std::move(value),
                 .batch = b,
                 .needs_grad = trainable,
                 .leaf = true});
  }

  // Plain per-sample input: rows are features, columns are samples.
  NodeId input(Matrix value, bool requires_grad = false) {
    const int b = static_cast<int>(value.cols());
    return push({.op = Op::input,
                 .value = std::move(value),
                 .batch = b,
                 .needs_grad = requires_grad,
                 .leaf = true});
  }

  NodeId constant(Matrix value) { return input(std::move(value), false); }

  NodeId concat_rows(NodeId a, NodeId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.value.cols() != nb.value.cols() || na.channels != nb.channels)
      throw std::invalid_argument("concat_rows: column layout mismatch");
    Matrix out(na.value.rows() + nb.value.rows(), na.value.cols());
    out.topRows(na.value.rows()) = na.value;
    out.bottomRows(nb.value.rows()) = nb.value;
    return push({.op = Op::concat_rows,
                 .inputs = {a, b},
                 .value = std::move(out),
                 .channels = na.channels,
                 .batch = na.batch,
                 .needs_grad = na.needs_grad || nb.needs_grad});
  }

  // Seeds one-hot input derivatives. The input has `spatial + 1` rows: the
  // spatial coordinates followed by time.
  NodeId augment(NodeId in, int spatial) {
    const Node& n = at(in);
    if (n.channels.augmented())
      throw std::invalid_argument("augment: input is already augmented");
    if (n.value.rows() != spatial + 1)
      throw std::invalid_argument("augment: expected spatial + 1 input rows");
    const Channels ch = Channels::augmented(spatial);
    const int b = n.batch;
    const int rows = static_cast<int>(n.value.rows());
    Matrix out = Matrix::Zero(rows, static_cast<Eigen::Index>(ch.count()) * b);
    out.leftCols(b) = n.value;
    for (int k = 0; k < ch.jac; ++k) out.block(k, (1 + k) * b, 1, b).setOnes();
    return push({.op = Op::augment,
                 .inputs = {in},
                 .value = std::move(out),
                 .channels = ch,
                 .batch = b,
                 .needs_grad = n.needs_grad});
  }

  NodeId affine(NodeId weight, NodeId bias, NodeId in) {
    return affine_impl(weight, bias, in, 0.0, -1);
  }

  // W·in + b + skip_weight·skip, applied channel-wise (bias on values only).
  NodeId affine(NodeId weight, NodeId bias, NodeId in, double skip_weight,
                NodeId skip) {
    return affine_impl(weight, bias, in, skip_weight, skip);
  }

  NodeId activation(Activation kind, NodeId in) {
    const Node& n = at(in);
    const int b = n.batch;
    const Channels ch = n.channels;
    const Matrix& x = n.value;
    Matrix out(x.rows(), x.cols());

    const auto v = x.leftCols(b).array();
    Eigen::ArrayXXd d1, d2;
    if (kind == Activation::tanh) {
      const Eigen::ArrayXXd s = v.tanh();
      out.leftCols(b) = s.matrix();
      d1 = 1.0 - s.square();
      d2 = -2.0 * s * d1;
    } else {
      out.leftCols(b) = v.max(0.0).matrix();
      d1 = (v > 0.0).cast<double>();
      d2 = Eigen::ArrayXXd::Zero(v.rows(), v.cols());
    }
    for (int k = 0; k < ch.jac; ++k)
      out.middleCols((1 + k) * b, b) = (d1 * x.middleCols((1 + k) * b, b).array()).matrix();
    if (ch.lap) {
      Eigen::ArrayXXd sq = Eigen::ArrayXXd::Zero(v.rows(), v.cols());
      for (int k = 0; k < ch.spatial; ++k)
        sq += x.middleCols((1 + k) * b, b).array().square();
      const int lap_col = (1 + ch.jac) * b;
      out.middleCols(lap_col, b) =
          (d2 * sq + d1 * x.middleCols(lap_col, b).array()).matrix();
    }
    return push({.op = Op::activation,
                 .inputs = {in},
                 .value = std::move(out),
                 .channels = ch,
                 .batch = b,
                 .needs_grad = n.needs_grad,
                 .activation = kind});
  }

  // base + weight·branch
  NodeId residual(NodeId base, NodeId branch, double weight) {
    const Node& a = at(base);
    const Node& c = at(branch);
    require_same_shape(a, c, "residual");
    Matrix out = a.value + weight * c.value;
    return push({.op = Op::residual,
                 .inputs = {base, branch},
                 .value = std::move(out),
                 .channels = a.channels,
                 .batch = a.batch,
                 .needs_grad = a.needs_grad || c.needs_grad,
                 .scalar = weight});
  }

  // Per-sample blend: column j of every channel block becomes
  // wa(j)·a + wb(j)·b. The weights are constants.
  NodeId column_blend(NodeId a, NodeId b, const RowVector& wa, const RowVector& wb) {
    const Node& na = at(a);
    const Node& nb = at(b);
    require_same_shape(na, nb, "column_blend");
    if (wa.size() != na.batch || wb.size() != na.batch)
      throw std::invalid_argument("column_blend: weight length must equal batch");
    Matrix out(na.value.rows(), na.value.cols());
    const int blocks = na.channels.count();
    for (int c = 0; c < blocks; ++c) {
      const auto cols = Eigen::seqN(c * na.batch, na.batch);
      out(Eigen::all, cols) = na.value(Eigen::all, cols) * wa.asDiagonal() +
                              nb.value(Eigen::all, cols) * wb.asDiagonal();
    }
    Node node{.op = Op::column_blend,
              .inputs = {a, b},
              .value = std::move(out),
              .channels = na.channels,
              .batch = na.batch,
              .needs_grad = na.needs_grad || nb.needs_grad};
    node.weights = {wa, wb};
    return push(std::move(node));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b, "add"); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b, "sub"); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::mul, a, b, "mul"); }

  NodeId scale(NodeId a, double factor) {
    const Node& n = at(a);
    Matrix out = factor * n.value;
    return push({.op = Op::scale,
                 .inputs = {a},
                 .value = std::move(out),
                 .channels = n.channels,
                 .batch = n.batch,
                 .needs_grad = n.needs_grad,
                 .scalar = factor});
  }

  NodeId abs(NodeId a) {
    const Node& n = at(a);
    if (n.channels.augmented()) throw std::invalid_argument("abs: plain node expected");
    Matrix out = n.value.cwiseAbs();
    return push({.op = Op::abs,
                 .inputs = {a},
                 .value = std::move(out),
                 .batch = n.batch,
                 .needs_grad = n.needs_grad});
  }

  NodeId sum(NodeId a) { return reduce(Op::sum, a); }
  NodeId mean(NodeId a) { return reduce(Op::mean, a); }

  NodeId custom(std::vector<NodeId> inputs, Matrix value, Channels channels,
                int batch, Pullback pullback) {
    bool needs = false;
    for (NodeId id : inputs) needs = needs || at(id).needs_grad;
    return push({.op = Op::custom,
                 .inputs = std::move(inputs),
                 .value = std::move(value),
                 .channels = channels,
                 .batch = batch,
                 .needs_grad = needs,
                 .pullback = std::move(pullback)});
  }

  const Matrix& value(NodeId id) const { return at(id).value; }
  double scalar(NodeId id) const {
    const Matrix& v = at(id).value;
    if (v.size() != 1) throw std::invalid_argument("scalar: node is not 1x1");
    return v(0, 0);
  }
  Channels channels(NodeId id) const { return at(id).channels; }
  int batch(NodeId id) const { return at(id).batch; }
  bool needs_grad(NodeId id) const { return at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Values-only view of a node: the leading B columns.
  Matrix values(NodeId id) const {
    const Node& n = at(id);
    return n.value.leftCols(n.batch);
  }

  AugState aug_state(NodeId id, int unit, int sample) const {
    const Node& n = at(id);
    const int b = n.batch;
    AugState s;
    s.value = n.value(unit, sample);
    s.jac.resize(static_cast<std::size_t>(n.channels.jac));
    for (int k = 0; k < n.channels.jac; ++k)
      s.jac[static_cast<std::size_t>(k)] = n.value(unit, (1 + k) * b + sample);
    if (n.channels.lap) s.lap = n.value(unit, (1 + n.channels.jac) * b + sample);
    return s;
  }

  std::vector<NodeId> parameters() const { return leaves(Op::parameter); }
  std::vector<NodeId> inputs() const { return leaves(Op::input); }

  // Reverse sweep from a 1x1 node. Returns d(seed)/d(leaf) for every leaf that
  // needs a gradient (trainable parameters and inputs created with
  // requires_grad).
  Gradients backward(NodeId seed) const {
    const Node& s = at(seed);
    if (s.value.rows() != 1 || s.value.cols() != 1)
      throw std::invalid_argument("backward: seed node is not scalar");
    std::vector<Matrix> adj(nodes_.size());
    std::vector<char> live(nodes_.size(), 0);
    adj[static_cast<std::size_t>(seed)] = Matrix::Ones(1, 1);
    live[static_cast<std::size_t>(seed)] = 1;

    auto slot = [&](NodeId id) -> Matrix* {
      const auto i = static_cast<std::size_t>(id);
      if (!nodes_[i].needs_grad) return nullptr;
      if (!live[i]) {
        adj[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
        live[i] = 1;
      }
      return &adj[i];
    };

    for (NodeId id = seed; id >= 0; --id) {
      const auto i = static_cast<std::size_t>(id);
      if (!live[i] || !nodes_[i].needs_grad) continue;
      propagate(nodes_[i], adj[i], slot);
    }

    Gradients grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.leaf || !n.needs_grad) continue;
      grads.emplace(static_cast<NodeId>(i),
                    live[i] ? adj[i] : Matrix::Zero(n.value.rows(), n.value.cols()));
    }
    return grads;
  }

 private:
  enum class Op : std::uint8_t {
    parameter,
    input,
    concat_rows,
    augment,
    affine,
    activation,
    residual,
    column_blend,
    add,
    sub,
    mul,
    scale,
    abs,
    sum,
    mean,
    custom,
  };

  struct Node {
    Op op;
    std::vector<NodeId> inputs{};
    Matrix value;
    Channels channels{};
    int batch = 1;
    bool needs_grad = false;
    bool leaf = false;
    double scalar = 0.0;
    Activation activation = Activation::tanh;
    Pullback pullback{};
    std::vector<RowVector> weights{};
  };

  const Node& at(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::out_of_range("tape: unknown node " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<NodeId> leaves(Op op) const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == op) out.push_back(static_cast<NodeId>(i));
    return out;
  }

  static void require_same_shape(const Node& a, const Node& b, const char* what) {
    if (a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.channels != b.channels)
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  NodeId affine_impl(NodeId weight, NodeId bias, NodeId in, double skip_weight,
                     NodeId skip) {
    const Node& w = at(weight);
    const Node& bvec = at(bias);
    const Node& x = at(in);
    if (w.value.cols() != x.value.rows())
      throw std::invalid_argument("affine: weight columns do not match input rows");
    if (bvec.value.rows() != w.value.rows() || bvec.value.cols() != 1)
      throw std::invalid_argument("affine: bias shape mismatch");
    Matrix out(w.value.rows(), x.value.cols());
    out.noalias() = w.value * x.value;
    out.leftCols(x.batch).colwise() += bvec.value.col(0);
    bool needs = w.needs_grad || bvec.needs_grad || x.needs_grad;
    if (skip >= 0) {
      const Node& sk = at(skip);
      if (sk.value.rows() != out.rows() || sk.value.cols() != out.cols() ||
          sk.channels != x.channels)
        throw std::invalid_argument("affine: skip input does not match output arity");
      out += skip_weight * sk.value;
      needs = needs || sk.needs_grad;
    }
    std::vector<NodeId> ins{weight, bias, in};
    if (skip >= 0) ins.push_back(skip);
    return push({.op = Op::affine,
                 .inputs = std::move(ins),
                 .value = std::move(out),
                 .channels = x.channels,
                 .batch = x.batch,
                 .needs_grad = needs,
                 .scalar = skip_weight});
  }

  NodeId binary(Op op, NodeId a, NodeId b, const char* what) {
    const Node& na = at(a);
    const Node& nb = at(b);
    require_same_shape(na, nb, what);
    Matrix out;
    switch (op) {
      case Op::add: out = na.value + nb.value; break;
      case Op::sub: out = na.value - nb.value; break;
      default: out = product(na.value, nb.value, na.channels, na.batch); break;
    }
    return push({.op = op,
                 .inputs = {a, b},
                 .value = std::move(out),
                 .channels = na.channels,
                 .batch = na.batch,
                 .needs_grad = na.needs_grad || nb.needs_grad});
  }

  NodeId reduce(Op op, NodeId a) {
    const Node& n = at(a);
    if (n.channels.augmented()) throw std::invalid_argument("reduce: plain node expected");
    double v = n.value.sum();
    if (op == Op::mean) v /= static_cast<double>(n.value.size());
    return push({.op = op,
                 .inputs = {a},
                 .value = Matrix::Constant(1, 1, v),
                 .batch = 1,
                 .needs_grad = n.needs_grad});
  }

  template <typename Slot>
  void propagate(const Node& n, const Matrix& g, Slot& slot) const {
    switch (n.op) {
      case Op::parameter:
      case Op::input:
        return;
      case Op::concat_rows: {
        const auto ra = at(n.inputs[0]).value.rows();
        if (Matrix* a = slot(n.inputs[0])) *a += g.topRows(ra);
        if (Matrix* b = slot(n.inputs[1])) *b += g.bottomRows(g.rows() - ra);
        return;
      }
      case Op::augment:
        if (Matrix* a = slot(n.inputs[0])) *a += g.leftCols(n.batch);
        return;
      case Op::affine: {
        const Matrix& w = at(n.inputs[0]).value;
        const Matrix& x = at(n.inputs[2]).value;
        if (Matrix* gw = slot(n.inputs[0])) gw->noalias() += g * x.transpose();
        if (Matrix* gb = slot(n.inputs[1])) *gb += g.leftCols(n.batch).rowwise().sum();
        if (Matrix* gx = slot(n.inputs[2])) gx->noalias() += w.transpose() * g;
        if (n.inputs.size() > 3)
          if (Matrix* gs = slot(n.inputs[3])) *gs += n.scalar * g;
        return;
      }
      case Op::activation:
        if (Matrix* gx = slot(n.inputs[0])) activation_pullback(n, g, *gx);
        return;
      case Op::residual:
        if (Matrix* a = slot(n.inputs[0])) *a += g;
        if (Matrix* b = slot(n.inputs[1])) *b += n.scalar * g;
        return;
      case Op::column_blend: {
        const int blocks = n.channels.count();
        for (int side = 0; side < 2; ++side) {
          Matrix* dst = slot(n.inputs[static_cast<std::size_t>(side)]);
          if (!dst) continue;
          for (int c = 0; c < blocks; ++c) {
            const auto cols = Eigen::seqN(c * n.batch, n.batch);
            (*dst)(Eigen::all, cols) +=
                g(Eigen::all, cols) * n.weights[static_cast<std::size_t>(side)].asDiagonal();
          }
        }
        return;
      }
      case Op::add:
        if (Matrix* a = slot(n.inputs[0])) *a += g;
        if (Matrix* b = slot(n.inputs[1])) *b += g;
        return;
      case Op::sub:
        if (Matrix* a = slot(n.inputs[0])) *a += g;
        if (Matrix* b = slot(n.inputs[1])) *b -= g;
        return;
      case Op::mul: {
        const Matrix& va = at(n.inputs[0]).value;
        const Matrix& vb = at(n.inputs[1]).value;
        if (Matrix* a = slot(n.inputs[0])) product_pullback(g, vb, n.channels, n.batch, *a);
        if (Matrix* b = slot(n.inputs[1])) product_pullback(g, va, n.channels, n.batch, *b);
        return;
      }
      case Op::scale:
        if (Matrix* a = slot(n.inputs[0])) *a += n.scalar * g;
        return;
      case Op::abs: {
        const Matrix& v = at(n.inputs[0]).value;
        if (Matrix* a = slot(n.inputs[0]))
          *a += g.cwiseProduct(v.unaryExpr([](double x) {
            return static_cast<double>((x > 0.0) - (x < 0.0));
          }));
        return;
      }
      case Op::sum:
      case Op::mean: {
        const Matrix& v = at(n.inputs[0]).value;
        double f = g(0, 0);
        if (n.op == Op::mean) f /= static_cast<double>(v.size());
        if (Matrix* a = slot(n.inputs[0])) a->array() += f;
        return;
      }
      case Op::custom: {
        std::vector<Matrix*> ins;
        ins.reserve(n.inputs.size());
        for (NodeId id : n.inputs) ins.push_back(slot(id));
        n.pullback(g, std::span<Matrix* const>(ins));
        return;
      }
    }
  }

  // Product rule per channel block:
  //   (ab)_0 = a_0 b_0,  (ab)_k = a_k b_0 + a_0 b_k,
  //   (ab)_L = a_L b_0 + a_0 b_L + 2 Σ_spatial a_k b_k
  static Matrix product(const Matrix& a, const Matrix& b, Channels ch, int batch) {
    if (!ch.augmented()) return a.cwiseProduct(b);
    auto blk = [batch](const Matrix& m, int c) { return m.middleCols(c * batch, batch).array(); };
    Matrix out(a.rows(), a.cols());
    out.leftCols(batch) = (blk(a, 0) * blk(b, 0)).matrix();
    for (int k = 0; k < ch.jac; ++k)
      out.middleCols((1 + k) * batch, batch) =
          (blk(a, 1 + k) * blk(b, 0) + blk(a, 0) * blk(b, 1 + k)).matrix();
    if (ch.lap) {
      const int l = 1 + ch.jac;
      Eigen::ArrayXXd lap = blk(a, l) * blk(b, 0) + blk(a, 0) * blk(b, l);
      for (int k = 0; k < ch.spatial; ++k) lap += 2.0 * blk(a, 1 + k) * blk(b, 1 + k);
      out.middleCols(l * batch, batch) = lap.matrix();
    }
    return out;
  }

  // Adjoint of one factor of `product`, given the other factor's value.
  static void product_pullback(const Matrix& g, const Matrix& other, Channels ch, int batch,
                               Matrix& adj) {
    if (!ch.augmented()) {
      adj += g.cwiseProduct(other);
      return;
    }
    auto blk = [batch](const Matrix& m, int c) { return m.middleCols(c * batch, batch).array(); };
    const int l = 1 + ch.jac;
    Eigen::ArrayXXd a0 = blk(g, 0) * blk(other, 0);
    for (int k = 0; k < ch.jac; ++k) {
      a0 += blk(g, 1 + k) * blk(other, 1 + k);
      Eigen::ArrayXXd ak = blk(g, 1 + k) * blk(other, 0);
      if (ch.lap && k < ch.spatial) ak += 2.0 * blk(g, l) * blk(other, 1 + k);
      adj.middleCols((1 + k) * batch, batch).array() += ak;
    }
    if (ch.lap) {
      a0 += blk(g, l) * blk(other, l);
      adj.middleCols(l * batch, batch).array() += blk(g, l) * blk(other, 0);
    }
    adj.leftCols(batch).array() += a0;
  }

  // Reverse of the augmented activation. With y = σ(v), J' = σ'(v)J and
  // L' = σ''(v)S + σ'(v)L where S = Σ_spatial J_k²:
  //   v̄ = σ' ȳ + σ'' Σ_k J̄'_k J_k + (σ''' S + σ'' L) L̄'
  //   J̄_k = σ' J̄'_k + 2σ'' J_k L̄'   (spatial k only)
  //   L̄ = σ' L̄'
  void activation_pullback(const Node& n, const Matrix& g, Matrix& gx) const {
    const Matrix& x = at(n.inputs[0]).value;
    const int b = n.batch;
    const Channels ch = n.channels;
    const auto v = x.leftCols(b).array();

    Eigen::ArrayXXd d1, d2, d3;
    if (n.activation == Activation::tanh) {
      const Eigen::ArrayXXd s = v.tanh();
      d1 = 1.0 - s.square();
      d2 = -2.0 * s * d1;
      d3 = -2.0 * (d1.square() + s * d2);
    } else {
      d1 = (v > 0.0).cast<double>();
      d2 = Eigen::ArrayXXd::Zero(v.rows(), v.cols());
      d3 = d2;
    }

    Eigen::ArrayXXd vbar = d1 * g.leftCols(b).array();
    for (int k = 0; k < ch.jac; ++k) {
      const auto jk = x.middleCols((1 + k) * b, b).array();
      const auto gk = g.middleCols((1 + k) * b, b).array();
      vbar += d2 * gk * jk;
      gx.middleCols((1 + k) * b, b).array() += d1 * gk;
    }
    if (ch.lap) {
      const int lap_col = (1 + ch.jac) * b;
      const auto gl = g.middleCols(lap_col, b).array();
      const auto lap = x.middleCols(lap_col, b).array();
      Eigen::ArrayXXd sq = Eigen::ArrayXXd::Zero(v.rows(), v.cols());
      for (int k = 0; k < ch.spatial; ++k) {
        const auto jk = x.middleCols((1 + k) * b, b).array();
        sq += jk.square();
        gx.middleCols((1 + k) * b, b).array() += 2.0 * d2 * jk * gl;
      }
      vbar += (d3 * sq + d2 * lap) * gl;
      gx.middleCols(lap_col, b).array() += d1 * gl;
    }
    gx.leftCols(b).array() += vbar;
  }

  std::vector<Node> nodes_;
};

}  // namespace apac::ad
