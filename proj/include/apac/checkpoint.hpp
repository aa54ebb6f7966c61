#pragma once

// Binary checkpoint of a TrainerState. Layout (little-endian, see
// docs/checkpoint-format.md):
//
//   0   char[8]  "APACCKPT"
//   8   u32      format version (1)
//   12  u32      dim
//   16  u32      width
//   20  u32      hidden_layers
//   24  u32      flags (bit 0: closed-form value model)
//   28  u32      batch_size
//   32  u64      seed
//   40  u64      iteration
//   48  u64      n_value   (value-net parameter count)
//   56  u64      n_gen     (generator parameter count)
//   64  f64      closed-form curvature (0 unless flag set)
//   72  f64      lambda_hjb
//   80  u64      value Adam step
//   88  u64      generator Adam step
//   96  f64[]    value params, generator params, value m, value v,
//                generator m, generator v

#include "apac/trainer.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apac {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr char checkpoint_magic[8] = {'A', 'P', 'A', 'C', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;
inline constexpr std::size_t checkpoint_header_bytes = 96;

struct CheckpointHeader {
  std::uint32_t dim = 0;
  std::uint32_t width = 0;
  std::uint32_t hidden_layers = 0;
  std::uint32_t flags = 0;
  std::uint32_t batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t n_value = 0;
  std::uint64_t n_gen = 0;
  double curvature = 0.0;
  double lambda_hjb = 1.0;
  std::uint64_t value_step = 0;
  std::uint64_t gen_step = 0;
};

namespace detail {
template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}
template <typename T>
T get(const std::vector<char>& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}
}  // namespace detail

inline std::vector<char> serialize_checkpoint(const TrainerState& s) {
  const std::size_t nv = s.value.data.size();
  const std::size_t ng = s.generator.data.size();
  std::vector<char> buf(checkpoint_header_bytes + 3 * (nv + ng) * sizeof(double));
  std::memcpy(buf.data(), checkpoint_magic, 8);
  using detail::put;
  put<std::uint32_t>(buf, 8, checkpoint_version);
  put<std::uint32_t>(buf, 12, static_cast<std::uint32_t>(s.value.config.input_dim - 1));
  put<std::uint32_t>(buf, 16, static_cast<std::uint32_t>(s.value.config.width));
  put<std::uint32_t>(buf, 20, static_cast<std::uint32_t>(s.value.config.hidden_layers));
  put<std::uint32_t>(buf, 24, s.closed_form_curvature ? 1u : 0u);
  put<std::uint32_t>(buf, 28, static_cast<std::uint32_t>(s.batch_size));
  put<std::uint64_t>(buf, 32, s.seed);
  put<std::uint64_t>(buf, 40, s.iteration);
  put<std::uint64_t>(buf, 48, nv);
  put<std::uint64_t>(buf, 56, ng);
  put<double>(buf, 64, s.closed_form_curvature.value_or(0.0));
  put<double>(buf, 72, s.lambda_hjb);
  put<std::uint64_t>(buf, 80, s.value_adam.step);
  put<std::uint64_t>(buf, 88, s.generator_adam.step);
  std::size_t off = checkpoint_header_bytes;
  for (const std::vector<double>* v : {&s.value.data, &s.generator.data, &s.value_adam.m,
                                       &s.value_adam.v, &s.generator_adam.m, &s.generator_adam.v}) {
    std::memcpy(buf.data() + off, v->data(), v->size() * sizeof(double));
    off += v->size() * sizeof(double);
  }
  return buf;
}

inline CheckpointHeader read_checkpoint_header(const std::vector<char>& buf) {
  if (buf.size() < checkpoint_header_bytes || std::memcmp(buf.data(), checkpoint_magic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic or truncated header");
  using detail::get;
  if (get<std::uint32_t>(buf, 8) != checkpoint_version)
    throw std::runtime_error("checkpoint: unsupported format version");
  CheckpointHeader h;
  h.dim = get<std::uint32_t>(buf, 12);
  h.width = get<std::uint32_t>(buf, 16);
  h.hidden_layers = get<std::uint32_t>(buf, 20);
  h.flags = get<std::uint32_t>(buf, 24);
  h.batch_size = get<std::uint32_t>(buf, 28);
  h.seed = get<std::uint64_t>(buf, 32);
  h.iteration = get<std::uint64_t>(buf, 40);
  h.n_value = get<std::uint64_t>(buf, 48);
  h.n_gen = get<std::uint64_t>(buf, 56);
  h.curvature = get<double>(buf, 64);
  h.lambda_hjb = get<double>(buf, 72);
  h.value_step = get<std::uint64_t>(buf, 80);
  h.gen_step = get<std::uint64_t>(buf, 88);
  return h;
}

// Restores parameters, Adam moments and counters into a state built for the
// same environment and network shape. The monitor set is left untouched.
inline void restore_checkpoint(TrainerState& s, const std::vector<char>& buf) {
  const CheckpointHeader h = read_checkpoint_header(buf);
  if (static_cast<int>(h.dim) != s.value.config.input_dim - 1)
    throw std::runtime_error("checkpoint: dimension " + std::to_string(h.dim) +
                             " does not match the configured dimension " +
                             std::to_string(s.value.config.input_dim - 1));
  if (static_cast<int>(h.width) != s.value.config.width ||
      static_cast<int>(h.hidden_layers) != s.value.config.hidden_layers ||
      h.n_value != s.value.data.size() || h.n_gen != s.generator.data.size())
    throw std::runtime_error("checkpoint: network shape does not match the configuration");
  const std::size_t expect = checkpoint_header_bytes + 3 * (h.n_value + h.n_gen) * sizeof(double);
  if (buf.size() != expect) throw std::runtime_error("checkpoint: unexpected file size");
  s.seed = h.seed;
  s.iteration = h.iteration;
  s.batch_size = static_cast<int>(h.batch_size);
  s.lambda_hjb = h.lambda_hjb;
  s.closed_form_curvature =
      (h.flags & 1u) ? std::optional<double>(h.curvature) : std::optional<double>();
  s.value_adam.step = h.value_step;
  s.generator_adam.step = h.gen_step;
  std::size_t off = checkpoint_header_bytes;
  for (std::vector<double>* v : {&s.value.data, &s.generator.data, &s.value_adam.m,
                                 &s.value_adam.v, &s.generator_adam.m, &s.generator_adam.v}) {
    std::memcpy(v->data(), buf.data() + off, v->size() * sizeof(double));
    off += v->size() * sizeof(double);
  }
}

inline void save_checkpoint(const TrainerState& s, const std::string& path) {
  const std::vector<char> buf = serialize_checkpoint(s);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + tmp + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint into place at '" + path + "'");
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace apac
