#pragma once

// TOML run configuration: keys may sit at the top level or inside any
// section ([training], [network], ...); section names are not significant.

#include "apac/experiments.hpp"

#include <fmt/format.h>
#include <toml.hpp>

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace apac {

namespace detail {

inline void flatten(const toml::table& tbl, std::map<std::string, const toml::node*>& out) {
  for (const auto& [k, v] : tbl) {
    const std::string key(k.str());
    if (const auto* sub = v.as_table()) {
      flatten(*sub, out);
      continue;
    }
    if (!out.emplace(key, &v).second) throw ConfigError(key, "specified more than once");
  }
}

class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, const toml::node*> keys) : keys_(std::move(keys)) {}

  bool has(const std::string& key) const { return keys_.count(key) != 0; }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError(key, "required key is missing");
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* n = take(key)) {
      const auto v = n->value<std::string>();
      if (!v) throw ConfigError(key, "expected a string");
      out = *v;
    }
  }

  void read(const std::string& key, double& out) {
    if (const auto* n = take(key)) {
      if (n->is_integer()) out = static_cast<double>(*n->value<std::int64_t>());
      else if (n->is_floating_point()) out = *n->value<double>();
      else throw ConfigError(key, "expected a number");
    }
  }

  void read(const std::string& key, int& out) {
    if (const auto* n = take(key)) {
      const auto v = n->value_exact<std::int64_t>();
      if (!v || *v < INT32_MIN || *v > INT32_MAX) throw ConfigError(key, "expected an integer");
      out = static_cast<int>(*v);
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const auto* n = take(key)) {
      const auto v = n->value_exact<std::int64_t>();
      if (!v || *v < 0) throw ConfigError(key, "expected a non-negative integer");
      out = static_cast<std::uint64_t>(*v);
    }
  }

  void read(const std::string& key, std::array<double, 2>& out) {
    if (const auto* n = take(key)) {
      const auto* arr = n->as_array();
      if (!arr || arr->size() != 2) throw ConfigError(key, "expected an array of two numbers");
      for (std::size_t i = 0; i < 2; ++i) {
        const auto v = (*arr)[i].value<double>();
        if (!v) throw ConfigError(key, "expected an array of two numbers");
        out[i] = *v;
      }
    }
  }

  void reject_leftovers() const {
    for (const auto& [k, n] : keys_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

 private:
  const toml::node* take(const std::string& key) {
    used_[key] = true;
    const auto it = keys_.find(key);
    return it == keys_.end() ? nullptr : it->second;
  }

  std::map<std::string, const toml::node*> keys_;
  std::map<std::string, bool> used_;
};

}  // namespace detail

// Parses, applies the experiment preset, then the file's keys, then validates.
inline RunConfig parse_config(std::string_view text, std::string_view source = "config") {
  toml::table tbl;
  try {
    tbl = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " (" << e.source().begin << ")";
    throw ConfigError("", msg.str());
  }
  std::map<std::string, const toml::node*> keys;
  detail::flatten(tbl, keys);
  detail::KeyReader r(std::move(keys));
  for (const char* key : {"experiment", "dim", "nu"}) r.require(key);

  RunConfig c;
  r.read("experiment", c.experiment);
  if (!is_experiment(c.experiment))
    throw ConfigError("experiment", "unknown experiment '" + c.experiment + "'");
  r.read("dim", c.dim);
  apply_preset(c);
  r.read("dim", c.dim);
  r.read("nu", c.nu);
  r.read("gamma", c.gamma);
  r.read("beta", c.beta);
  r.read("speed_c", c.speed_c);
  r.read("gamma_obst", c.gamma_obst);
  r.read("gamma_cong", c.gamma_cong);
  r.read("T", c.T);
  r.read("batch_size", c.batch_size);
  r.read("iterations", c.iterations);
  r.read("lr_phi", c.lr_phi);
  r.read("lr_gen", c.lr_gen);
  r.read("betas", c.betas);
  r.read("weight_decay", c.weight_decay);
  r.read("lambda_hjb", c.lambda_hjb);
  r.read("smoothing_eps", c.smoothing_eps);
  r.read("seed", c.seed);
  r.read("log_interval", c.log_interval);
  r.read("validate_interval", c.validate_interval);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.read("output_dir", c.output_dir);
  r.read("hamiltonian_variant", c.hamiltonian_variant);
  r.read("l0_points", c.l0_points);
  r.read("width", c.width);
  r.read("hidden_layers", c.hidden_layers);
  r.read("monitor_size", c.monitor_size);
  r.read("mass", c.mass);
  r.read("gravity", c.gravity);
  r.reject_leftovers();
  validate(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

namespace detail {
// Shortest-exact float literal that TOML reads back as a float.
inline std::string toml_float(double v) {
  std::string s = fmt::format("{:.17g}", v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string toml_string(const std::string& v) {
  std::ostringstream out;
  out << toml::value<std::string>(v);
  return out.str();
}
}  // namespace detail

// Every field written explicitly, so the snapshot reproduces the run.
inline std::string config_snapshot(const RunConfig& c) {
  using detail::toml_float;
  std::string s;
  auto line = [&s](std::string_view key, const std::string& value) {
    s += fmt::format("{} = {}\n", key, value);
  };
  line("experiment", detail::toml_string(c.experiment));
  line("dim", std::to_string(c.dim));
  line("nu", toml_float(c.nu));
  line("gamma", toml_float(c.gamma));
  line("beta", toml_float(c.beta));
  line("speed_c", toml_float(c.speed_c));
  line("gamma_obst", toml_float(c.gamma_obst));
  line("gamma_cong", toml_float(c.gamma_cong));
  line("T", toml_float(c.T));
  line("mass", toml_float(c.mass));
  line("gravity", toml_float(c.gravity));
  line("hamiltonian_variant", detail::toml_string(c.hamiltonian_variant));
  line("smoothing_eps", toml_float(c.smoothing_eps));
  s += "\n[network]\n";
  line("width", std::to_string(c.width));
  line("hidden_layers", std::to_string(c.hidden_layers));
  s += "\n[training]\n";
  line("batch_size", std::to_string(c.batch_size));
  line("iterations", std::to_string(c.iterations));
  line("lr_phi", toml_float(c.lr_phi));
  line("lr_gen", toml_float(c.lr_gen));
  line("betas", fmt::format("[{}, {}]", toml_float(c.betas[0]), toml_float(c.betas[1])));
  line("weight_decay", toml_float(c.weight_decay));
  line("lambda_hjb", toml_float(c.lambda_hjb));
  line("l0_points", detail::toml_string(c.l0_points));
  line("seed", std::to_string(c.seed));
  line("monitor_size", std::to_string(c.monitor_size));
  s += "\n[output]\n";
  line("log_interval", std::to_string(c.log_interval));
  line("validate_interval", std::to_string(c.validate_interval));
  line("checkpoint_interval", std::to_string(c.checkpoint_interval));
  line("output_dir", detail::toml_string(c.output_dir));
  return s;
}

}  // namespace apac
