// apac: train, export and validate mean-field-game solutions.
//
//   apac train --config run.toml [--seed N] [--iterations N] [--output-dir D]
//              [--paper-scale] [--resume]
//   apac export-trajectories --checkpoint C --config run.toml --samples N --times M
//              [--output F] [--seed S]
//   apac validate --checkpoint C --config run.toml [--history F]
//   apac list-experiments
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage,
// 3 output directory locked by another writer.

#include "apac/apac.hpp"
#include "apac/config_io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr int exit_runtime = 1;
constexpr int exit_config = 2;
constexpr int exit_locked = 3;

struct ExitError {
  int code;
  std::string message;
};

// Exclusive marker in the output directory; removed when the run ends.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw ExitError{exit_locked, "output directory '" + dir.string() +
                                       "' is locked by another run (remove " + path_.string() +
                                       " if stale)"};
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

apac::RunConfig read_config(const std::string& path) {
  try {
    return apac::load_config(path);
  } catch (const apac::ConfigError& e) {
    throw ExitError{exit_config, std::string("config error: ") + e.what()};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ExitError{exit_runtime, "cannot write '" + path.string() + "'"};
  out << text;
}

// Keeps the header and rows up to `iteration`; later rows belong to work
// that the checkpoint does not contain.
std::string truncated_history(const fs::path& path, std::uint64_t iteration) {
  std::ifstream in(path);
  std::string out, line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      out += line + "\n";
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(line.substr(0, comma)) <= iteration) out += line + "\n";
  }
  if (out.empty()) out = std::string(apac::history_header) + "\n";
  return out;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> iterations;
  std::optional<std::string> output_dir;
  bool paper_scale = false;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  apac::RunConfig cfg = read_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.paper_scale) cfg.iterations = apac::paper_iterations(cfg);
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.output_dir) cfg.output_dir = *a.output_dir;
  try {
    apac::validate(cfg);
  } catch (const apac::ConfigError& e) {
    throw ExitError{exit_config, std::string("config error: ") + e.what()};
  }

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  DirectoryLock lock(dir);
  write_text(dir / "config.resolved.toml", apac::config_snapshot(cfg));

  const apac::Environment env = apac::make_environment(cfg);
  apac::TrainerState state = apac::make_trainer_state(env, apac::trainer_settings(cfg));
  const fs::path history_path = dir / "history.csv";
  const fs::path checkpoint_path = dir / "checkpoint.bin";

  if (a.resume) {
    if (!fs::exists(checkpoint_path))
      throw ExitError{exit_runtime, "--resume: no checkpoint at '" + checkpoint_path.string() + "'"};
    apac::restore_checkpoint(state, apac::read_file_bytes(checkpoint_path.string()));
    write_text(history_path, truncated_history(history_path, state.iteration));
  } else {
    write_text(history_path, std::string(apac::history_header) + "\n");
  }

  std::ofstream history(history_path, std::ios::binary | std::ios::app);
  std::optional<apac::AnalyticSolution> sol;
  std::optional<apac::ValidationPoints> points;
  if (cfg.experiment == "analytic") {
    sol = apac::analytic_solution(cfg);
    points = apac::validation_points(cfg);
  }

  apac::TrainOptions opt;
  opt.iterations = cfg.iterations;
  opt.log_interval = cfg.log_interval;
  opt.validate_interval = cfg.validate_interval;
  opt.checkpoint_interval = cfg.checkpoint_interval;
  opt.analytic = sol ? &*sol : nullptr;
  opt.validation = points ? &*points : nullptr;
  opt.on_row = [&](const apac::HistoryRow& row) {
    history << apac::history_line(row) << '\n';
    history.flush();
    fmt::print("iter {:>8}  monitor {:.6e}", row.iteration, row.monitor_residual.value_or(0.0));
    if (row.rel_error_phi) fmt::print("  rel_phi {:.6e}  rel_rho {:.6e}", *row.rel_error_phi, *row.rel_error_rho);
    fmt::print("\n");
    std::fflush(stdout);
  };
  opt.on_checkpoint = [&](const apac::TrainerState& s) {
    save_checkpoint(s, checkpoint_path.string());
  };
  apac::train(state, env, opt);
  save_checkpoint(state, checkpoint_path.string());
  return 0;
}

apac::TrainerState load_state(const apac::RunConfig& cfg, const apac::Environment& env,
                              const std::string& checkpoint) {
  apac::TrainerState state = apac::make_trainer_state(env, apac::trainer_settings(cfg));
  const auto bytes = apac::read_file_bytes(checkpoint);
  const auto header = apac::read_checkpoint_header(bytes);
  if (static_cast<int>(header.dim) != cfg.dim)
    throw ExitError{exit_runtime, fmt::format("dimension mismatch: checkpoint has d = {}, config has d = {}",
                                              header.dim, cfg.dim)};
  apac::restore_checkpoint(state, bytes);
  return state;
}

struct ExportArgs {
  std::string checkpoint, config, output;
  int samples = 100;
  int times = 16;
  std::uint64_t seed = 0;
};

int cmd_export(const ExportArgs& a) {
  const apac::RunConfig cfg = read_config(a.config);
  const apac::Environment env = apac::make_environment(cfg);
  const apac::TrainerState state = load_state(cfg, env, a.checkpoint);
  if (a.samples < 1 || a.times < 1) throw ExitError{exit_config, "--samples and --times must be >= 1"};

  auto rng = apac::derived_rng(a.seed, apac::stream::validation + 1);
  const apac::Matrix z = apac::sample_initial(env, a.samples, rng);
  const std::vector<double> times =
      a.times == 1 ? std::vector<double>{0.0} : apac::uniform_levels(a.times, 0.0, env.horizon);

  std::string out = apac::trajectory_header(cfg.dim) + "\n";
  std::vector<apac::Matrix> clouds;
  for (double t : times)
    clouds.push_back(apac::generate(state.generator, z, apac::RowVector::Constant(a.samples, t), env.horizon));
  for (int i = 0; i < a.samples; ++i)
    for (std::size_t k = 0; k < times.size(); ++k) {
      out += fmt::format("{},{}", i, apac::csv_real(times[k]));
      for (int c = 0; c < cfg.dim; ++c) out += "," + apac::csv_real(clouds[k](c, i));
      out += '\n';
    }
  if (a.output.empty() || a.output == "-") {
    std::cout << out;
  } else {
    write_text(a.output, out);
  }
  return 0;
}

struct ValidateArgs {
  std::string checkpoint, config, history;
};

int cmd_validate(const ValidateArgs& a) {
  const apac::RunConfig cfg = read_config(a.config);
  if (cfg.experiment != "analytic")
    throw ExitError{exit_config, "validate: experiment '" + cfg.experiment +
                                     "' has no closed-form solution; only 'analytic' can be validated"};
  const apac::Environment env = apac::make_environment(cfg);
  const apac::TrainerState state = load_state(cfg, env, a.checkpoint);
  const apac::AnalyticSolution sol = apac::analytic_solution(cfg);
  const apac::ValidationPoints pts = apac::validation_points(cfg);
  const apac::ValidationReport rep = apac::validate_analytic(state, env, sol, pts, cfg.seed);

  apac::HistoryRow row;
  row.iteration = state.iteration;
  row.monitor_residual = apac::monitor_residual(state, env);
  row.rel_error_phi = rep.rel_error_phi;
  row.rel_error_rho = rep.rel_error_rho;

  fmt::print("{} evaluation points ({})\n", rep.points,
             cfg.dim == 2 ? "32 x 32 grid x 16 times" : "samples from rho0");
  fmt::print("rel_error_phi = {}\n", apac::csv_real(rep.rel_error_phi));
  fmt::print("rel_error_rho = {}\n", apac::csv_real(rep.rel_error_rho));

  const fs::path history = a.history.empty() ? fs::path(a.checkpoint).parent_path() / "history.csv"
                                             : fs::path(a.history);
  const bool fresh = !fs::exists(history);
  std::ofstream out(history, std::ios::binary | std::ios::app);
  if (!out) throw ExitError{exit_runtime, "cannot append to '" + history.string() + "'"};
  if (fresh) out << apac::history_header << '\n';
  out << apac::history_line(row) << '\n';
  fmt::print("appended to {}\n", history.string());
  return 0;
}

int cmd_list() {
  for (auto name : apac::experiment_names)
    fmt::print("{:<12} {}\n", name, apac::experiment_summary(name));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field-game solver (alternating value/generator training)"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train both networks and write history, checkpoint and config snapshot");
  t->add_option("--config", train.config, "TOML run configuration")->required();
  t->add_option("--seed", train.seed, "override the config seed");
  t->add_option("--iterations", train.iterations, "override the iteration count");
  t->add_option("--output-dir", train.output_dir, "override the output directory");
  t->add_flag("--paper-scale", train.paper_scale, "use the reference iteration counts");
  t->add_flag("--resume", train.resume, "continue from output_dir/checkpoint.bin");

  ExportArgs exp;
  auto* e = app.add_subcommand("export-trajectories", "push rho0 samples through the generator over time");
  e->add_option("--checkpoint", exp.checkpoint)->required();
  e->add_option("--config", exp.config)->required();
  e->add_option("--samples", exp.samples, "number of rho0 draws")->capture_default_str();
  e->add_option("--times", exp.times, "uniform times on [0, T]")->capture_default_str();
  e->add_option("--output", exp.output, "CSV path (stdout when omitted)");
  e->add_option("--seed", exp.seed, "seed for the rho0 draws")->capture_default_str();

  ValidateArgs val;
  auto* v = app.add_subcommand("validate", "compare against the closed-form analytic solution");
  v->add_option("--checkpoint", val.checkpoint)->required();
  v->add_option("--config", val.config)->required();
  v->add_option("--history", val.history, "history CSV to append to (default: next to the checkpoint)");

  auto* l = app.add_subcommand("list-experiments", "list the shipped experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_export(exp);
    if (v->parsed()) return cmd_validate(val);
    if (l->parsed()) return cmd_list();
  } catch (const ExitError& err) {
    std::cerr << "apac: " << err.message << '\n';
    return err.code;
  } catch (const std::exception& err) {
    std::cerr << "apac: " << err.what() << '\n';
    return exit_runtime;
  }
  return 0;
}
