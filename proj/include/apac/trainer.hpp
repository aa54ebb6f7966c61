#pragma once

// Alternating training of the value function φ_ω and the generator G_θ.
//
// φ step: x_b = G(z_b, t_b) with θ frozen,
//   ℓ0   = mean φ(z_b, 0)   (or φ(x_b, 0) with L0Points::pushed)
//   ℓt   = mean[∂tφ + νΔφ − H(x_b, ∇φ)]
//   ℓHJB = λ · mean|∂tφ + νΔφ − H + f|
// and ω descends −(ℓ0 + ℓt) + ℓHJB.
//
// G step: ℓt = mean[∂tφ + νΔφ − H + f] at (G(z_b, t_b), t_b) with ω frozen;
// θ descends ℓt.

#include "apac/adam.hpp"
#include "apac/autodiff.hpp"
#include "apac/environment.hpp"
#include "apac/network.hpp"
#include "apac/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace apac {

// Where ℓ0 samples φ(·, 0): at the ρ0 draws z_b, or at the pushed x_b.
enum class L0Points { initial, pushed };

struct TrainerSettings {
  int batch_size = 50;
  double lambda_hjb = 1.0;
  int monitor_size = 4096;
  int width = 100;
  int hidden_layers = 3;
  AdamConfig value_adam{4e-4, 0.5, 0.9, 1e-4, 1e-8};
  AdamConfig generator_adam{1e-4, 0.5, 0.9, 1e-4, 1e-8};
  std::uint64_t seed = 0;
  L0Points l0_points = L0Points::initial;
};

// Fixed points for the HJB residual monitor, with the detached partner batch
// and KDE reference draws the interaction term needs.
struct MonitorSet {
  Matrix z;
  RowVector t;
  Matrix partner_z;
  Matrix kde_reference_z;
};

struct TrainerState {
  NetworkParams value;
  NetworkParams generator;
  AdamState value_adam;
  AdamState generator_adam;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  double lambda_hjb = 1.0;
  int batch_size = 50;
  L0Points l0_points = L0Points::initial;
  // When set, N_ω is replaced by curvature·‖x‖²/2 and ω is not trained.
  std::optional<double> closed_form_curvature;
  MonitorSet monitor;
};

// Independent, reproducible stream for (seed, purpose, index).
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream,
                                   std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace stream {
inline constexpr std::uint64_t value_init = 1;
inline constexpr std::uint64_t generator_init = 2;
inline constexpr std::uint64_t monitor = 3;
inline constexpr std::uint64_t step = 4;
inline constexpr std::uint64_t validation = 5;
}  // namespace stream

struct StepBatch {
  Matrix z;
  RowVector t;
  Matrix partner_z;  // empty unless the environment has a pair interaction
};

inline StepBatch draw_step_batch(const Environment& env, int batch, std::mt19937_64& rng) {
  BatchSample s = sample_batch(env, batch, rng);
  StepBatch out{std::move(s.z), std::move(s.t), Matrix()};
  if (env.needs_partner()) out.partner_z = sample_initial(env, batch, rng);
  return out;
}

inline MonitorSet make_monitor_set(const Environment& env, int size, int kde_reference,
                                   std::uint64_t seed) {
  auto rng = derived_rng(seed, stream::monitor);
  BatchSample s = sample_batch(env, size, rng);
  MonitorSet m{std::move(s.z), std::move(s.t), Matrix(), Matrix()};
  if (env.needs_partner()) m.partner_z = sample_initial(env, size, rng);
  if (env.needs_kde()) m.kde_reference_z = sample_initial(env, kde_reference, rng);
  return m;
}

inline TrainerState make_trainer_state(const Environment& env, const TrainerSettings& cfg) {
  TrainerState s;
  s.value = init_params(ResNetConfig::value_net(env.dim, cfg.width, cfg.hidden_layers), Role::value,
                        derived_rng(cfg.seed, stream::value_init)());
  s.generator = init_params(ResNetConfig::generator(env.dim, cfg.width, cfg.hidden_layers),
                            Role::generator, derived_rng(cfg.seed, stream::generator_init)());
  s.value_adam = AdamState::zeros(s.value.data.size(), cfg.value_adam);
  s.generator_adam = AdamState::zeros(s.generator.data.size(), cfg.generator_adam);
  s.seed = cfg.seed;
  s.lambda_hjb = cfg.lambda_hjb;
  s.batch_size = cfg.batch_size;
  s.l0_points = cfg.l0_points;
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.lambda_hjb < 0.0) throw std::invalid_argument("lambda_hjb must be >= 0");
  s.monitor = make_monitor_set(env, cfg.monitor_size, cfg.batch_size, cfg.seed);
  return s;
}

// ------------------------------------------------------------ interaction

struct InteractionData {
  Matrix partner;
  std::vector<KdeEstimator> kde;

  InteractionInputs inputs() const {
    return {partner.size() ? &partner : nullptr, kde.empty() ? nullptr : &kde};
  }
};

// Population-dependent inputs of f at times t, all detached from θ: the
// partner batch pushed through G, and per sample b a KDE over G(ref_j, t_b).
inline InteractionData prepare_interaction(const NetworkParams& generator, const Environment& env,
                                           const RowVector& t, const Matrix& partner_z,
                                           const Matrix& kde_reference_z) {
  InteractionData out;
  if (env.needs_partner()) out.partner = generate(generator, partner_z, t, env.horizon);
  if (env.needs_kde()) {
    const auto n = kde_reference_z.cols();
    const auto b = t.size();
    Matrix z(env.dim, n * b);
    RowVector tt(n * b);
    for (Eigen::Index j = 0; j < b; ++j) {
      z.middleCols(j * n, n) = kde_reference_z;
      tt.segment(j * n, n).setConstant(t(j));
    }
    const Matrix centers = generate(generator, z, tt, env.horizon);
    out.kde.reserve(static_cast<std::size_t>(b));
    for (Eigen::Index j = 0; j < b; ++j)
      out.kde.emplace_back(centers.middleCols(j * n, n), env.kde_scale);
  }
  return out;
}

// ------------------------------------------------------------- residuals

// r = ∂tφ + νΔφ − H(x, ∇xφ) + f at one point.
inline double hjb_residual(const Environment& env, std::span<const double> x,
                           const ad::AugState& phi, double f) {
  const std::span<const double> p(phi.jac.data(), x.size());
  return phi.jac[x.size()] + env.nu * phi.lap - env.hamiltonian->value(x, p) + f;
}

// Per-sample ∂tφ + νΔφ − H(x, ∇xφ) as a 1 × B tape node.
inline NodeId hjb_operator(Tape& tape, const Environment& env, NodeId phi, NodeId x) {
  const ad::Channels ch = tape.channels(phi);
  if (ch.jac != env.dim + 1 || !ch.lap)
    throw std::invalid_argument("hjb_operator: augmented value node expected");
  const int b = tape.batch(phi);
  const int d = env.dim;
  const Matrix& pv = tape.value(phi);
  const Matrix xs = tape.value(x);
  Matrix p(d, b);
  for (int k = 0; k < d; ++k) p.row(k) = pv.row(0).segment((1 + k) * b, b);
  Matrix q(1, b);
  for (int j = 0; j < b; ++j) {
    const std::span<const double> xj(xs.col(j).data(), static_cast<std::size_t>(d));
    const std::span<const double> pj(p.col(j).data(), static_cast<std::size_t>(d));
    q(0, j) = pv(0, (1 + d) * b + j) + env.nu * pv(0, (2 + d) * b + j) -
              env.hamiltonian->value(xj, pj);
  }
  auto pullback = [&env, xs, p, b, d](const Matrix& g, std::span<Matrix* const> adj) {
    Matrix* gphi = adj[0];
    Matrix* gx = adj[1];
    std::vector<double> dx(static_cast<std::size_t>(d)), dp(static_cast<std::size_t>(d));
    for (int j = 0; j < b; ++j) {
      const double gj = g(0, j);
      env.hamiltonian->gradient({xs.col(j).data(), static_cast<std::size_t>(d)},
                                {p.col(j).data(), static_cast<std::size_t>(d)}, dx, dp);
      if (gphi) {
        for (int k = 0; k < d; ++k) (*gphi)(0, (1 + k) * b + j) -= gj * dp[static_cast<std::size_t>(k)];
        (*gphi)(0, (1 + d) * b + j) += gj;
        (*gphi)(0, (2 + d) * b + j) += env.nu * gj;
      }
      if (gx)
        for (int k = 0; k < d; ++k) (*gx)(k, j) -= gj * dx[static_cast<std::size_t>(k)];
    }
  };
  return tape.custom({phi, x}, std::move(q), ad::Channels::plain(), b, std::move(pullback));
}

// f at the columns of x as a tape node; the gradient flows through x only.
inline NodeId interaction_node(Tape& tape, const Environment& env, NodeId x,
                               const InteractionInputs& inputs) {
  Matrix grad;
  RowVector f = interaction_values(env, tape.value(x), inputs, tape.needs_grad(x) ? &grad : nullptr);
  const int b = tape.batch(x);
  auto pullback = [grad](const Matrix& g, std::span<Matrix* const> adj) {
    if (adj[0]) *adj[0] += grad * g.row(0).asDiagonal();
  };
  return tape.custom({x}, Matrix(f), ad::Channels::plain(), b, std::move(pullback));
}

// ------------------------------------------------------------ objectives

struct PhiLosses {
  double l0 = 0.0;
  double lt = 0.0;
  double lhjb = 0.0;
};

struct PhiEvaluation {
  PhiLosses losses;
  double objective = 0.0;
  std::vector<double> gradient;  // w.r.t. ω; empty for a closed-form value model
};

inline PhiEvaluation evaluate_phi(const TrainerState& state, const Environment& env,
                                  const StepBatch& batch, bool with_gradient = true) {
  const Matrix x = generate(state.generator, batch.z, batch.t, env.horizon);
  const InteractionData data =
      prepare_interaction(state.generator, env, batch.t, batch.partner_z, batch.z);
  const RowVector f = interaction_values(env, x, data.inputs());

  Tape tape;
  const bool trainable = with_gradient && !state.closed_form_curvature;
  const NetworkLeaves leaves = register_params(tape, state.value, trainable);
  const ValueModel model{&state.value, &leaves, state.closed_form_curvature};
  const NodeId xn = tape.constant(x);
  const auto b = batch.t.size();

  const NodeId x0 = state.l0_points == L0Points::initial ? tape.constant(batch.z) : xn;
  const NodeId phi0 = value_eval(tape, model, *env.terminal, x0, RowVector::Zero(b), env.horizon, false);
  const NodeId phi = value_eval(tape, model, *env.terminal, xn, batch.t, env.horizon, true);
  const NodeId q = hjb_operator(tape, env, phi, xn);
  const NodeId r = tape.add(q, tape.constant(Matrix(f)));

  const NodeId l0 = tape.mean(phi0);
  const NodeId lt = tape.mean(q);
  const NodeId lhjb = tape.scale(tape.mean(tape.abs(r)), state.lambda_hjb);
  const NodeId objective = tape.add(tape.scale(tape.add(l0, lt), -1.0), lhjb);

  PhiEvaluation out;
  out.losses = {tape.scalar(l0), tape.scalar(lt), tape.scalar(lhjb)};
  out.objective = tape.scalar(objective);
  if (trainable) out.gradient = flatten_gradient(tape.backward(objective), leaves, state.value);
  return out;
}

struct GeneratorEvaluation {
  double lt = 0.0;
  std::vector<double> gradient;  // w.r.t. θ
};

inline GeneratorEvaluation evaluate_generator(const TrainerState& state, const Environment& env,
                                              const StepBatch& batch, bool with_gradient = true) {
  const InteractionData data =
      prepare_interaction(state.generator, env, batch.t, batch.partner_z, batch.z);

  Tape tape;
  const NetworkLeaves value_leaves = register_params(tape, state.value, false);
  const NetworkLeaves gen_leaves = register_params(tape, state.generator, with_gradient);
  const ValueModel model{&state.value, &value_leaves, state.closed_form_curvature};

  const NodeId x = generator_eval(tape, state.generator, gen_leaves, tape.constant(batch.z), batch.t,
                                  env.horizon);
  const NodeId phi = value_eval(tape, model, *env.terminal, x, batch.t, env.horizon, true);
  const NodeId q = hjb_operator(tape, env, phi, x);
  const NodeId f = interaction_node(tape, env, x, data.inputs());
  const NodeId lt = tape.mean(tape.add(q, f));

  GeneratorEvaluation out;
  out.lt = tape.scalar(lt);
  if (with_gradient) out.gradient = flatten_gradient(tape.backward(lt), gen_leaves, state.generator);
  return out;
}

namespace detail {
inline void require_finite(double v, const char* what, std::uint64_t iteration) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << what << " is not finite (" << v << ") at iteration " << iteration;
    throw std::runtime_error(msg.str());
  }
}
}  // namespace detail

inline PhiLosses phi_step(TrainerState& state, const Environment& env, std::mt19937_64& rng) {
  const StepBatch batch = draw_step_batch(env, state.batch_size, rng);
  const PhiEvaluation e = evaluate_phi(state, env, batch, true);
  detail::require_finite(e.losses.l0, "phi step l0", state.iteration);
  detail::require_finite(e.losses.lt, "phi step lt", state.iteration);
  detail::require_finite(e.losses.lhjb, "phi step lhjb", state.iteration);
  if (!e.gradient.empty()) adam_step(state.value_adam, state.value.data, e.gradient);
  return e.losses;
}

inline double generator_step(TrainerState& state, const Environment& env, std::mt19937_64& rng) {
  const StepBatch batch = draw_step_batch(env, state.batch_size, rng);
  const GeneratorEvaluation e = evaluate_generator(state, env, batch, true);
  detail::require_finite(e.lt, "generator step lt", state.iteration);
  adam_step(state.generator_adam, state.generator.data, e.gradient);
  return e.lt;
}

// ------------------------------------------------------------- threading

// Worker count for chunked evaluation, capped by APAC_THREADS (default 1).
inline int thread_budget() {
  if (const char* env = std::getenv("APAC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Runs fn(chunk) for chunk in [0, chunks). Results must be written per chunk
// so the caller can reduce them in a fixed order.
template <typename Fn>
void for_each_chunk(int chunks, Fn&& fn) {
  const int workers = std::min(thread_budget(), chunks);
  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int c = w; c < chunks; c += workers) fn(c);
    });
  for (auto& th : pool) th.join();
}

inline constexpr int evaluation_chunk = 256;

// Per-point residuals r = ∂tφ + νΔφ − H + f at x = G(z, t).
inline RowVector monitor_residuals(const TrainerState& state, const Environment& env) {
  const MonitorSet& m = state.monitor;
  const auto n = m.t.size();
  const int chunks = static_cast<int>((n + evaluation_chunk - 1) / evaluation_chunk);
  RowVector out(n);
  for_each_chunk(chunks, [&](int c) {
    const Eigen::Index lo = static_cast<Eigen::Index>(c) * evaluation_chunk;
    const Eigen::Index len = std::min<Eigen::Index>(evaluation_chunk, n - lo);
    const Matrix z = m.z.middleCols(lo, len);
    const RowVector t = m.t.segment(lo, len);
    const Matrix partner = env.needs_partner() ? Matrix(m.partner_z.middleCols(lo, len)) : Matrix();
    const InteractionData data = prepare_interaction(state.generator, env, t, partner, m.kde_reference_z);
    const Matrix x = generate(state.generator, z, t, env.horizon);
    const RowVector f = interaction_values(env, x, data.inputs());

    Tape tape;
    const NetworkLeaves leaves = register_params(tape, state.value, false);
    const ValueModel model{&state.value, &leaves, state.closed_form_curvature};
    const NodeId xn = tape.constant(x);
    const NodeId phi = value_eval(tape, model, *env.terminal, xn, t, env.horizon, true);
    const NodeId q = hjb_operator(tape, env, phi, xn);
    out.segment(lo, len) = tape.value(q).row(0) + f;
  });
  return out;
}

inline double monitor_residual(const TrainerState& state, const Environment& env) {
  return monitor_residuals(state, env).cwiseAbs().mean();
}

// φ at arbitrary points (values only).
inline RowVector predict_phi(const TrainerState& state, const Environment& env, const Matrix& x,
                             const RowVector& t) {
  const auto n = t.size();
  const int chunks = static_cast<int>((n + 4 * evaluation_chunk - 1) / (4 * evaluation_chunk));
  RowVector out(n);
  for_each_chunk(chunks, [&](int c) {
    const Eigen::Index lo = static_cast<Eigen::Index>(c) * 4 * evaluation_chunk;
    const Eigen::Index len = std::min<Eigen::Index>(4 * evaluation_chunk, n - lo);
    Tape tape;
    const NetworkLeaves leaves = register_params(tape, state.value, false);
    const ValueModel model{&state.value, &leaves, state.closed_form_curvature};
    const NodeId phi = value_eval(tape, model, *env.terminal, tape.constant(x.middleCols(lo, len)),
                                  t.segment(lo, len), env.horizon, false);
    out.segment(lo, len) = tape.value(phi).row(0);
  });
  return out;
}

// ------------------------------------------------------------ validation

struct ValidationReport {
  double rel_error_phi = 0.0;
  double rel_error_rho = 0.0;
  std::size_t points = 0;
};

inline constexpr int validation_kde_reference = 4096;

// φ error against the closed form, and the error of a KDE of G(·, t)#ρ0
// against the closed-form ρ, both global L2-relative over the point set.
inline ValidationReport validate_analytic(const TrainerState& state, const Environment& env,
                                          const AnalyticSolution& sol, const ValidationPoints& pts,
                                          std::uint64_t seed) {
  if (sol.dim != env.dim) throw std::invalid_argument("validate_analytic: dimension mismatch");
  ValidationReport rep;
  rep.points = pts.size();
  const RowVector pred = predict_phi(state, env, pts.x, pts.t);
  std::vector<double> truth_phi(pts.size()), truth_rho(pts.size()), est_rho(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto [phi, rho] =
        analytic_phi_rho(sol, {pts.x.col(col).data(), static_cast<std::size_t>(sol.dim)}, pts.t(col));
    truth_phi[i] = phi;
    truth_rho[i] = rho;
  }
  rep.rel_error_phi = relative_error({pred.data(), pts.size()}, truth_phi);

  auto rng = derived_rng(seed, stream::validation);
  const Matrix ref = sample_initial(env, validation_kde_reference, rng);
  const double scale = sol.gamma > 0.0 ? std::sqrt(sol.gamma / sol.nu) : 1.0;
  for (std::size_t l = 0; l < pts.time_levels.size(); ++l) {
    const RowVector tl = RowVector::Constant(ref.cols(), pts.time_levels[l]);
    const KdeEstimator kde(generate(state.generator, ref, tl, env.horizon), scale);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts.level[i] == static_cast<int>(l))
        est_rho[i] = kde.density({pts.x.col(static_cast<Eigen::Index>(i)).data(),
                                  static_cast<std::size_t>(sol.dim)});
  }
  rep.rel_error_rho = relative_error(est_rho, truth_rho);
  return rep;
}

// ---------------------------------------------------------------- driver

struct HistoryRow {
  std::uint64_t iteration = 0;
  std::optional<double> l0, lt, lhjb;
  std::optional<double> monitor_residual;
  std::optional<double> rel_error_phi, rel_error_rho;
};

struct TrainOptions {
  std::uint64_t iterations = 0;  // target iteration count (absolute)
  std::uint64_t log_interval = 100;
  std::uint64_t validate_interval = 1000;
  std::uint64_t checkpoint_interval = 0;
  const AnalyticSolution* analytic = nullptr;
  const ValidationPoints* validation = nullptr;
  std::function<void(const HistoryRow&)> on_row;
  std::function<void(const TrainerState&)> on_checkpoint;
};

inline std::vector<HistoryRow> train(TrainerState& state, const Environment& env,
                                     const TrainOptions& opt) {
  std::vector<HistoryRow> history;
  auto emit = [&](HistoryRow row, bool validate) {
    row.monitor_residual = monitor_residual(state, env);
    if (validate && opt.analytic && opt.validation) {
      const ValidationReport rep = validate_analytic(state, env, *opt.analytic, *opt.validation, state.seed);
      row.rel_error_phi = rep.rel_error_phi;
      row.rel_error_rho = rep.rel_error_rho;
    }
    history.push_back(row);
    if (opt.on_row) opt.on_row(history.back());
  };

  if (state.iteration == 0) emit(HistoryRow{}, true);

  while (state.iteration < opt.iterations) {
    const std::uint64_t it = state.iteration + 1;
    auto rng = derived_rng(state.seed, stream::step, it);
    const PhiLosses losses = phi_step(state, env, rng);
    generator_step(state, env, rng);
    state.iteration = it;

    const bool last = it == opt.iterations;
    const bool validate = opt.validate_interval > 0 && (it % opt.validate_interval == 0 || last);
    const bool log = (opt.log_interval > 0 && it % opt.log_interval == 0) || validate || last;
    if (log) {
      HistoryRow row;
      row.iteration = it;
      row.l0 = losses.l0;
      row.lt = losses.lt;
      row.lhjb = losses.lhjb;
      emit(row, validate);
    }
    if (opt.on_checkpoint && opt.checkpoint_interval > 0 && it % opt.checkpoint_interval == 0)
      opt.on_checkpoint(state);
  }
  return history;
}

}  // namespace apac
