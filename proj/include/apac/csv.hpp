#pragma once

// CSV output: header row, '.' decimal separator, 17 significant digits,
// blank cells for missing values.

#include "apac/trainer.hpp"

#include <fmt/format.h>

#include <optional>
#include <string>

namespace apac {

inline constexpr std::string_view history_header =
    "iter,l0,lt,lhjb,monitor_residual,rel_error_phi,rel_error_rho";

inline std::string csv_real(double v) { return fmt::format("{:.17g}", v); }

inline std::string csv_real(const std::optional<double>& v) { return v ? csv_real(*v) : std::string(); }

inline std::string history_line(const HistoryRow& r) {
  return fmt::format("{},{},{},{},{},{},{}", r.iteration, csv_real(r.l0), csv_real(r.lt),
                     csv_real(r.lhjb), csv_real(r.monitor_residual), csv_real(r.rel_error_phi),
                     csv_real(r.rel_error_rho));
}

inline std::string trajectory_header(int dim) {
  std::string h = "sample_id,t";
  for (int i = 1; i <= dim; ++i) h += fmt::format(",x_{}", i);
  return h;
}

}  // namespace apac
