#pragma once

// Shipped MFG instances and the run configuration that selects one.

#include "apac/environment.hpp"
#include "apac/trainer.hpp"
#include "apac/validation.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace apac {

inline constexpr std::array<std::string_view, 7> experiment_names{
    "nu_sweep", "obstacle", "congestion", "bottleneck", "symmetric", "analytic", "quadcopter"};

inline bool is_experiment(std::string_view name) {
  for (auto n : experiment_names)
    if (n == name) return true;
  return false;
}

inline std::string_view experiment_summary(std::string_view name) {
  if (name == "nu_sweep") return "obstacle-free transport from (-2,-2) to (2,2), c = 8";
  if (name == "obstacle") return "two rotated quadric obstacles, c = 8, gamma_obst = 5";
  if (name == "congestion") return "inverse-square congestion, (-2,0) to (2,0), c = 5";
  if (name == "bottleneck") return "congestion through a bottleneck, gamma_obst = 5";
  if (name == "symmetric") return "symmetric obstacle that splits the density, gamma_obst = 20";
  if (name == "analytic") return "quadratic Hamiltonian with log interaction and a closed form";
  if (name == "quadcopter") return "12-state quadrotor dynamics with Gaussian congestion, T = 4";
  return "";
}

struct RunConfig {
  std::string experiment;
  int dim = 2;
  double nu = 0.0;
  double gamma = 0.0;         // analytic: f = γ ln ρ
  double beta = 1.0;          // analytic: H = ‖p‖²/2 − β‖x‖²/2
  double speed_c = 8.0;
  double gamma_obst = 5.0;
  double gamma_cong = 20.0;   // quadcopter congestion weight
  double T = 1.0;
  int batch_size = 50;
  std::uint64_t iterations = 1000;
  double lr_phi = 4e-4;
  double lr_gen = 1e-4;
  std::array<double, 2> betas{0.5, 0.9};
  double weight_decay = 1e-4;
  double lambda_hjb = 1.0;
  double smoothing_eps = 1e-3;
  std::uint64_t seed = 0;
  std::uint64_t log_interval = 100;
  std::uint64_t validate_interval = 1000;
  std::uint64_t checkpoint_interval = 1000;
  std::string output_dir = "runs/out";
  std::string hamiltonian_variant = "derived";
  std::string l0_points = "initial";
  int width = 100;
  int hidden_layers = 3;
  int monitor_size = 4096;
  double mass = 0.5;
  double gravity = 9.81;
};

// Experiment-specific defaults applied before the file's own keys.
inline void apply_preset(RunConfig& c) {
  const std::string& e = c.experiment;
  c.speed_c = 8.0;
  c.gamma_obst = 5.0;
  c.T = 1.0;
  c.batch_size = 50;
  c.lambda_hjb = 1.0;
  c.iterations = 5000;
  c.validate_interval = 0;
  if (e == "congestion" || e == "bottleneck") c.speed_c = 5.0;
  if (e == "symmetric") {
    c.gamma_obst = 20.0;
    c.lambda_hjb = 0.1;
  }
  if (e == "nu_sweep") c.iterations = 10000;
  if (e == "analytic") {
    c.iterations = 30000;
    c.validate_interval = 1000;
  }
  if (e == "quadcopter") {
    c.dim = quad::state_dim;
    c.T = 4.0;
    c.batch_size = 150;
    c.iterations = 2000;
  }
}

// Iteration counts of the reference runs for the chosen setting.
inline std::uint64_t paper_iterations(const RunConfig& c) {
  const std::string& e = c.experiment;
  const bool planar = c.dim == 2;
  if (e == "obstacle" || e == "nu_sweep") return planar ? 200'000 : 300'000;
  if (e == "congestion") return planar ? 100'000 : 500'000;
  if (e == "bottleneck") {
    if (c.nu >= 0.4) return planar ? 150'000 : 800'000;
    return planar ? 100'000 : 500'000;
  }
  if (e == "symmetric") {
    if (planar) return c.nu == 0.0 ? 100'000 : 300'000;
    if (c.nu == 0.0) return 500'000;
    return c.dim <= 50 ? 1'000'000 : 2'000'000;
  }
  if (e == "analytic") return c.gamma == 0.0 ? 30'000 : 60'000;
  return 100'000;  // quadcopter
}

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline void validate(const RunConfig& c) {
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
  if (!is_experiment(c.experiment)) fail("experiment", "unknown experiment '" + c.experiment + "'");
  if (c.dim < 1) fail("dim", "must be >= 1");
  if (c.experiment != "analytic" && c.experiment != "quadcopter" && c.dim < 2)
    fail("dim", "must be >= 2 for this experiment");
  if (c.experiment == "quadcopter" && c.dim != quad::state_dim) fail("dim", "quadcopter requires dim = 12");
  if (!(c.nu >= 0.0)) fail("nu", "must be >= 0");
  if (c.experiment == "analytic" && !(c.nu > 0.0)) fail("nu", "analytic requires nu > 0");
  if (!(c.gamma >= 0.0)) fail("gamma", "must be >= 0");
  if (!(c.beta > 0.0)) fail("beta", "must be > 0");
  if (!(c.speed_c >= 0.0)) fail("speed_c", "must be >= 0");
  if (!(c.gamma_obst >= 0.0)) fail("gamma_obst", "must be >= 0");
  if (!(c.gamma_cong >= 0.0)) fail("gamma_cong", "must be >= 0");
  if (!(c.T > 0.0)) fail("T", "must be > 0");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  constexpr auto toml_int_max = static_cast<std::uint64_t>(INT64_MAX);
  if (c.seed > toml_int_max) fail("seed", "must be < 2^63");
  if (c.iterations > toml_int_max) fail("iterations", "must be < 2^63");
  if (!(c.lr_phi > 0.0)) fail("lr_phi", "must be > 0");
  if (!(c.lr_gen > 0.0)) fail("lr_gen", "must be > 0");
  for (double b : c.betas)
    if (!(b >= 0.0 && b < 1.0)) fail("betas", "entries must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(c.lambda_hjb >= 0.0)) fail("lambda_hjb", "must be >= 0");
  if (!(c.smoothing_eps > 0.0)) fail("smoothing_eps", "must be > 0");
  if (c.hamiltonian_variant != "derived" && c.hamiltonian_variant != "paper")
    fail("hamiltonian_variant", "must be 'derived' or 'paper'");
  if (c.l0_points != "initial" && c.l0_points != "pushed")
    fail("l0_points", "must be 'initial' or 'pushed'");
  if (c.width < 1) fail("width", "must be >= 1");
  if (c.hidden_layers < 1) fail("hidden_layers", "must be >= 1");
  if (c.monitor_size < 1) fail("monitor_size", "must be >= 1");
  if (!(c.mass > 0.0)) fail("mass", "must be > 0");
  if (c.output_dir.empty()) fail("output_dir", "must not be empty");
}

inline AnalyticSolution analytic_solution(const RunConfig& c) {
  return AnalyticSolution(c.gamma, c.nu, c.beta, c.dim);
}

inline Environment make_environment(const RunConfig& c) {
  validate(c);
  Environment env;
  env.name = c.experiment;
  env.dim = c.dim;
  env.nu = c.nu;
  env.horizon = c.T;
  env.speed_c = c.speed_c;
  const auto d = static_cast<std::size_t>(c.dim);
  const double planar_std = 1.0 / std::sqrt(10.0);
  const std::string& e = c.experiment;

  if (e == "analytic") {
    const AnalyticSolution sol = analytic_solution(c);
    env.hamiltonian = std::make_shared<HarmonicHamiltonian>(c.beta);
    env.terminal = std::make_shared<QuadraticBowl>(sol.alpha(), -sol.rate() * c.T);
    env.rho0 = {std::vector<double>(d, 0.0), std::vector<double>(d, std::sqrt(sol.variance()))};
    env.entropy_gamma = c.gamma;
    env.kde_scale = c.gamma > 0.0 ? std::sqrt(c.gamma / c.nu) : 1.0;
    return env;
  }

  if (e == "quadcopter") {
    const auto variant =
        c.hamiltonian_variant == "paper" ? QuadcopterVariant::paper : QuadcopterVariant::derived;
    env.hamiltonian = std::make_shared<QuadcopterHamiltonian>(c.mass, c.gravity, variant);
    // position (x, y, z) and velocity slots, target (2, 2, 2) at rest
    env.terminal = std::make_shared<SmoothedDistance>(std::vector<int>{0, 2, 4, 1, 3, 5},
                                                      std::vector<double>{2, 2, 2, 0, 0, 0},
                                                      c.smoothing_eps);
    env.rho0 = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (int s : quad::spatial) {
      env.rho0.center[static_cast<std::size_t>(s)] = -2.0;
      env.rho0.stddev[static_cast<std::size_t>(s)] = 0.5;
    }
    if (c.gamma_cong > 0.0) {
      env.pair = PairInteraction::gaussian_spatial;
      env.gamma_pair = c.gamma_cong;
    }
    return env;
  }

  env.hamiltonian = std::make_shared<NormHamiltonian>(c.speed_c, c.smoothing_eps);
  env.rho0.stddev.assign(d, planar_std);
  if (e == "congestion" || e == "bottleneck") {
    env.rho0.center.assign(d, -2.0);
    env.rho0.center[1] = 0.0;
    env.terminal = std::make_shared<SmoothedDistance>(std::vector<int>{0, 1},
                                                      std::vector<double>{2, 0}, c.smoothing_eps);
    env.pair = PairInteraction::inverse_square;
    env.gamma_pair = 1.0;
    if (e == "bottleneck") {
      env.obstacle = ObstacleKind::bottleneck;
      env.gamma_obst = c.gamma_obst;
    }
    return env;
  }

  env.rho0.center.assign(d, 0.0);
  env.rho0.center[0] = -2.0;
  env.rho0.center[1] = -2.0;
  env.terminal = std::make_shared<SmoothedDistance>(std::vector<int>{0, 1},
                                                    std::vector<double>{2, 2}, c.smoothing_eps);
  if (e == "obstacle") env.obstacle = ObstacleKind::twin;
  if (e == "symmetric") env.obstacle = ObstacleKind::symmetric;
  if (env.obstacle != ObstacleKind::none) env.gamma_obst = c.gamma_obst;
  return env;
}

inline TrainerSettings trainer_settings(const RunConfig& c) {
  TrainerSettings s;
  s.batch_size = c.batch_size;
  s.lambda_hjb = c.lambda_hjb;
  s.monitor_size = c.monitor_size;
  s.width = c.width;
  s.hidden_layers = c.hidden_layers;
  s.value_adam = {c.lr_phi, c.betas[0], c.betas[1], c.weight_decay, 1e-8};
  s.generator_adam = {c.lr_gen, c.betas[0], c.betas[1], c.weight_decay, 1e-8};
  s.seed = c.seed;
  s.l0_points = c.l0_points == "pushed" ? L0Points::pushed : L0Points::initial;
  return s;
}

// Validation points: the planar grid for d = 2, ρ0 draws otherwise.
inline ValidationPoints validation_points(const RunConfig& c) {
  const AnalyticSolution sol = analytic_solution(c);
  return build_validation_points(sol, c.dim == 2 ? ValidationMode::grid2d : ValidationMode::samples,
                                 c.seed);
}

}  // namespace apac
