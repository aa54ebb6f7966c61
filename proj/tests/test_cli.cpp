#include "support.hpp"

#include "apac/config_io.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace apac;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(APAC_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("apac_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << body;
    return p;
  }

  // Small analytic run that trains in well under a second per 10 iterations.
  fs::path small_analytic(const std::string& extra = "") {
    return write_config("analytic.toml", "experiment = \"analytic\"\ndim = 2\nnu = 1.0\n" + extra +
                                             "[network]\nwidth = 16\n[training]\nmonitor_size = 64\n"
                                             "iterations = 10\n[output]\nlog_interval = 5\n"
                                             "validate_interval = 0\ncheckpoint_interval = 5\n");
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TrainWritesHistorySnapshotAndCheckpoint) {
  const fs::path out = dir_ / "run";
  const Result r = run("train --config " + small_analytic().string() + " --output-dir " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = lines(slurp(out / "history.csv"));
  ASSERT_EQ(rows.size(), 4u);  // header, 0, 5, 10
  EXPECT_EQ(rows[0], "iter,l0,lt,lhjb,monitor_residual,rel_error_phi,rel_error_rho");
  EXPECT_EQ(split(rows[1]).size(), 7u);
  EXPECT_EQ(split(rows[1])[1], "");
  EXPECT_EQ(split(rows[3])[0], "10");
  EXPECT_TRUE(fs::exists(out / "config.resolved.toml"));
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  EXPECT_FALSE(fs::exists(out / ".lock"));
}

TEST_F(Cli, MissingKeyIsAConfigError) {
  const fs::path cfg = write_config("bad.toml", "experiment = \"obstacle\"\ndim = 2\n");
  const Result r = run("train --config " + cfg.string() + " --output-dir " + (dir_ / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("nu"), std::string::npos) << r.output;
}

TEST_F(Cli, InvalidFieldsAreNamed) {
  for (const auto& [body, key] : std::vector<std::pair<std::string, std::string>>{
           {"batch_size = 0\n", "batch_size"},
           {"speed = 3.0\n", "speed"},
           {"lr_phi = \"fast\"\n", "lr_phi"},
           {"hamiltonian_variant = \"other\"\n", "hamiltonian_variant"}}) {
    const fs::path cfg = write_config("bad.toml", "experiment = \"obstacle\"\ndim = 2\nnu = 0.0\n" + body);
    const Result r = run("train --config " + cfg.string() + " --output-dir " + (dir_ / "o").string());
    EXPECT_EQ(r.code, 2) << body;
    EXPECT_NE(r.output.find(key), std::string::npos) << r.output;
  }
  const Result r = run("train --config " + small_analytic().string() + " --seed 9223372036854775808 --output-dir " +
                       (dir_ / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("seed"), std::string::npos) << r.output;
  EXPECT_EQ(run("train").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, ZeroIterationsWritesOnlyInitialRow) {
  const fs::path out = dir_ / "run";
  const Result r = run("train --config " + small_analytic().string() + " --iterations 0 --output-dir " +
                       out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = lines(slurp(out / "history.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(split(rows[1])[0], "0");
}

TEST_F(Cli, SnapshotReproducesHistoryByteForByte) {
  const fs::path a = dir_ / "a", b = dir_ / "b";
  ASSERT_EQ(run("train --config " + small_analytic().string() + " --seed 7 --output-dir " + a.string()).code, 0);
  ASSERT_EQ(run("train --config " + (a / "config.resolved.toml").string() + " --output-dir " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
}

TEST_F(Cli, ResumeContinuesTheSameRun) {
  const fs::path full = dir_ / "full", part = dir_ / "part";
  const std::string cfg = small_analytic().string();
  ASSERT_EQ(run("train --config " + cfg + " --iterations 20 --output-dir " + full.string()).code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --iterations 10 --output-dir " + part.string()).code, 0);
  const Result r = run("train --config " + cfg + " --iterations 20 --resume --output-dir " + part.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(full / "history.csv"), slurp(part / "history.csv"));
  EXPECT_EQ(slurp(full / "checkpoint.bin"), slurp(part / "checkpoint.bin"));
}

TEST_F(Cli, LockedOutputDirectory) {
  const fs::path out = dir_ / "run";
  fs::create_directories(out);
  std::ofstream(out / ".lock") << "1\n";
  const Result r = run("train --config " + small_analytic().string() + " --output-dir " + out.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("locked"), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "history.csv"));
}

TEST_F(Cli, ExportTrajectories) {
  const fs::path out = dir_ / "run";
  const fs::path cfg = small_analytic();
  ASSERT_EQ(run("train --config " + cfg.string() + " --output-dir " + out.string()).code, 0);
  const fs::path csv = dir_ / "traj.csv";
  const std::string args = "export-trajectories --checkpoint " + (out / "checkpoint.bin").string() +
                           " --config " + cfg.string() + " --samples 100 --times 16 --seed 3";
  ASSERT_EQ(run(args + " --output " + csv.string()).code, 0);
  const auto rows = lines(slurp(csv));
  ASSERT_EQ(rows.size(), 1601u);
  EXPECT_EQ(rows[0], "sample_id,t,x_1,x_2");
  EXPECT_EQ(run(args).output, slurp(csv));  // stdout form, same draws

  const RunConfig rc = load_config(cfg.string());
  const Environment env = make_environment(rc);
  auto rng = derived_rng(3, stream::validation + 1);
  const Matrix z = sample_initial(env, 100, rng);
  int initial = 0;
  double last_t = -1.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split(rows[i]);
    ASSERT_EQ(cells.size(), 4u);
    const int id = std::stoi(cells[0]);
    const double t = std::stod(cells[1]);
    EXPECT_EQ(id, static_cast<int>((i - 1) / 16));
    if ((i - 1) % 16 == 0) last_t = -1.0;
    EXPECT_GT(t, last_t);
    last_t = t;
    if (t == 0.0) {
      ++initial;
      EXPECT_EQ(std::stod(cells[2]), z(0, id));
      EXPECT_EQ(std::stod(cells[3]), z(1, id));
    }
  }
  EXPECT_EQ(initial, 100);
  EXPECT_EQ(last_t, 1.0);
}

TEST_F(Cli, ExportRejectsDimensionMismatch) {
  const fs::path out = dir_ / "run";
  ASSERT_EQ(run("train --config " + small_analytic().string() + " --iterations 0 --output-dir " + out.string()).code, 0);
  const fs::path other = write_config("d3.toml", "experiment = \"analytic\"\ndim = 3\nnu = 1.0\n[network]\nwidth = 16\n");
  const Result r = run("export-trajectories --checkpoint " + (out / "checkpoint.bin").string() + " --config " +
                       other.string() + " --samples 2 --times 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("dimension mismatch"), std::string::npos) << r.output;
}

TEST_F(Cli, ValidateClosedFormCheckpoint) {
  const fs::path cfg = write_config("a.toml", "experiment = \"analytic\"\ndim = 2\nnu = 1.0\n");
  const RunConfig rc = load_config(cfg.string());
  const Environment env = make_environment(rc);
  TrainerSettings ts = trainer_settings(rc);
  ts.monitor_size = 64;
  TrainerState s = make_trainer_state(env, ts);
  s.closed_form_curvature = analytic_solution(rc).alpha();
  s.generator = check::identity_generator(2);
  const fs::path ckpt = dir_ / "truth.bin";
  save_checkpoint(s, ckpt.string());

  const Result r = run("validate --checkpoint " + ckpt.string() + " --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("16384 evaluation points"), std::string::npos) << r.output;
  const auto pos = r.output.find("rel_error_phi = ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.output.substr(pos + 16)), 1e-12);
  const auto rows = lines(slurp(dir_ / "history.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], std::string(history_header));
  EXPECT_EQ(split(rows[1]).size(), 7u);
}

TEST_F(Cli, ValidateTrainedBeatsFresh) {
  const fs::path cfg = write_config("a.toml", "experiment = \"analytic\"\ndim = 2\nnu = 1.0\n"
                                              "[training]\nmonitor_size = 64\n[output]\nvalidate_interval = 0\n");
  const fs::path fresh = dir_ / "fresh", trained = dir_ / "trained";
  ASSERT_EQ(run("train --config " + cfg.string() + " --iterations 0 --output-dir " + fresh.string()).code, 0);
  ASSERT_EQ(run("train --config " + cfg.string() + " --iterations 400 --output-dir " + trained.string()).code, 0);
  auto phi_error = [&](const fs::path& d) {
    const Result r = run("validate --checkpoint " + (d / "checkpoint.bin").string() + " --config " + cfg.string());
    EXPECT_EQ(r.code, 0) << r.output;
    return std::stod(r.output.substr(r.output.find("rel_error_phi = ") + 16));
  };
  EXPECT_LT(phi_error(trained), phi_error(fresh));
}

TEST_F(Cli, ValidateRefusesOtherExperiments) {
  const fs::path cfg = write_config("o.toml", "experiment = \"obstacle\"\ndim = 2\nnu = 0.0\n[network]\nwidth = 16\n");
  const fs::path out = dir_ / "run";
  ASSERT_EQ(run("train --config " + cfg.string() + " --iterations 0 --output-dir " + out.string()).code, 0);
  const Result r = run("validate --checkpoint " + (out / "checkpoint.bin").string() + " --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("analytic"), std::string::npos);
}

TEST_F(Cli, ListExperiments) {
  const Result r = run("list-experiments");
  ASSERT_EQ(r.code, 0);
  const auto rows = lines(r.output);
  ASSERT_EQ(rows.size(), experiment_names.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].rfind(std::string(experiment_names[i]), 0), 0u);
}

TEST_F(Cli, ShippedConfigsParse) {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(APAC_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".toml") continue;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
    ++seen;
  }
  EXPECT_GE(seen, 3u);
}

// ------------------------------------------------------------- config I/O

TEST(ConfigIo, PresetThenFileThenValidation) {
  const RunConfig c = parse_config("experiment = \"congestion\"\ndim = 50\nnu = 0.1\n[training]\nlambda_hjb = 0.5\n");
  EXPECT_EQ(c.speed_c, 5.0);
  EXPECT_EQ(c.dim, 50);
  EXPECT_EQ(c.lambda_hjb, 0.5);
  EXPECT_EQ(c.batch_size, 50);
  EXPECT_EQ(c.lr_phi, 4e-4);
  EXPECT_EQ(c.lr_gen, 1e-4);
  EXPECT_EQ(c.betas[0], 0.5);
  EXPECT_EQ(c.betas[1], 0.9);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.l0_points, "initial");

  const RunConfig q = parse_config("experiment = \"quadcopter\"\ndim = 12\nnu = 0.0\n");
  EXPECT_EQ(q.batch_size, 150);
  EXPECT_EQ(q.T, 4.0);
  EXPECT_EQ(q.hamiltonian_variant, "derived");
  const RunConfig n = parse_config("experiment = \"nu_sweep\"\ndim = 2\nnu = 0\n");  // integer accepted
  EXPECT_EQ(n.nu, 0.0);
  EXPECT_EQ(n.iterations, 10000u);
}

TEST(ConfigIo, Errors) {
  auto key_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(key_of("dim = 2\nnu = 0.0\n"), "experiment");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\nnu = 0.0\n"), "dim");
  EXPECT_EQ(key_of("experiment = \"maze\"\ndim = 2\nnu = 0.0\n"), "experiment");
  EXPECT_EQ(key_of("experiment = \"analytic\"\ndim = 2\nnu = 0.0\n"), "nu");
  EXPECT_EQ(key_of("experiment = \"quadcopter\"\ndim = 3\nnu = 0.0\n"), "dim");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = -1.0\n"), "nu");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\nbetas = [0.5]\n"), "betas");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\nbetas = [0.5, 1.0]\n"), "betas");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\nseed = -3\n"), "seed");
  RunConfig big = parse_config("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\nseed = 9223372036854775807\n");
  EXPECT_NO_THROW(parse_config(config_snapshot(big)));
  big.seed += 1;
  EXPECT_THROW(validate(big), ConfigError);
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\nl0_points = \"mid\"\n"), "l0_points");
  EXPECT_EQ(key_of("experiment = \"obstacle\"\ndim = 2\nnu = 0.0\n[training]\nwidth = 3\n[network]\nwidth = 4\n"), "width");
  EXPECT_THROW(parse_config("experiment = \n"), ConfigError);
}

TEST(ConfigIo, SnapshotRoundTripsEveryField) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (auto name : experiment_names) {
    for (int trial = 0; trial < 5; ++trial) {
      RunConfig c;
      c.experiment = std::string(name);
      apply_preset(c);
      c.nu = u(rng);
      c.gamma = u(rng);
      c.beta = u(rng);
      c.speed_c = u(rng);
      c.gamma_obst = u(rng);
      c.gamma_cong = u(rng);
      c.T = u(rng);
      c.lr_phi = u(rng) * 1e-4;
      c.lr_gen = u(rng) * 1e-5;
      c.betas = {u(rng) / 4, u(rng) / 4};
      c.weight_decay = u(rng) * 1e-5;
      c.lambda_hjb = u(rng);
      c.smoothing_eps = u(rng) * 1e-3;
      c.seed = rng() >> 1;
      c.iterations = rng() % 100000;
      c.log_interval = 1 + rng() % 500;
      c.validate_interval = rng() % 500;
      c.checkpoint_interval = rng() % 500;
      c.output_dir = "runs/x y\"z";
      c.hamiltonian_variant = trial % 2 ? "paper" : "derived";
      c.l0_points = trial % 2 ? "pushed" : "initial";
      c.width = 1 + static_cast<int>(rng() % 64);
      c.hidden_layers = 1 + static_cast<int>(rng() % 4);
      c.monitor_size = 1 + static_cast<int>(rng() % 4096);
      c.mass = u(rng);
      c.gravity = u(rng);
      const RunConfig r = parse_config(config_snapshot(c));
      EXPECT_EQ(config_snapshot(r), config_snapshot(c));
      EXPECT_EQ(r.nu, c.nu);
      EXPECT_EQ(r.seed, c.seed);
      EXPECT_EQ(r.betas, c.betas);
      EXPECT_EQ(r.output_dir, c.output_dir);
      EXPECT_EQ(r.l0_points, c.l0_points);
      EXPECT_EQ(r.mass, c.mass);
    }
  }
}

TEST(ConfigIo, ReferenceScaleCounts) {
  auto count = [](std::string e, int d, double nu, double gamma = 0.0) {
    RunConfig c;
    c.experiment = std::move(e);
    c.dim = d;
    c.nu = nu;
    c.gamma = gamma;
    return paper_iterations(c);
  };
  EXPECT_EQ(count("obstacle", 2, 0.0), 200000u);
  EXPECT_EQ(count("obstacle", 100, 0.1), 300000u);
  EXPECT_EQ(count("congestion", 2, 0.0), 100000u);
  EXPECT_EQ(count("congestion", 50, 0.1), 500000u);
  EXPECT_EQ(count("bottleneck", 2, 0.4), 150000u);
  EXPECT_EQ(count("bottleneck", 100, 0.4), 800000u);
  EXPECT_EQ(count("symmetric", 50, 0.1), 1000000u);
  EXPECT_EQ(count("symmetric", 100, 0.1), 2000000u);
  EXPECT_EQ(count("analytic", 2, 1.0, 0.1), 60000u);
}
