#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace apac {

// Scott's rule, B^(-1/(d+4)). pow can land one ulp off an exact integer root
// (4096^(1/6) gives 3.9999999999999996), so such roots are snapped first.
inline double scott_bandwidth(std::size_t samples, int dim) {
  if (samples == 0) throw std::invalid_argument("scott_bandwidth: no samples");
  const double n = static_cast<double>(samples);
  double root = std::pow(n, 1.0 / (dim + 4));
  const double whole = std::round(root);
  if (std::abs(root - whole) < 1e-9 * whole && std::pow(whole, dim + 4) == n) root = whole;
  return 1.0 / root;
}

// Gaussian kernel density estimate with isotropic kernel width h·σ:
//   ρ̂(q) = (1/B) Σ_j (√(2π)hσ)^(-d) exp(-‖q - z_j‖² / (2(hσ)²))
class KdeEstimator {
 public:
  KdeEstimator(Eigen::MatrixXd samples, double scale)
      : samples_(std::move(samples)), scale_(scale) {
    if (samples_.cols() == 0) throw std::invalid_argument("KdeEstimator: B = 0");
    if (!(scale_ > 0.0)) throw std::invalid_argument("KdeEstimator: scale must be positive");
    bandwidth_ = scott_bandwidth(static_cast<std::size_t>(samples_.cols()),
                                 static_cast<int>(samples_.rows()));
    width_ = bandwidth_ * scale_;
    log_norm_ = -static_cast<double>(samples_.rows()) *
                    std::log(std::sqrt(2.0 * std::numbers::pi) * width_) -
                std::log(static_cast<double>(samples_.cols()));
  }

  int dim() const { return static_cast<int>(samples_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(samples_.cols()); }
  double bandwidth() const { return bandwidth_; }
  double scale() const { return scale_; }
  double kernel_width() const { return width_; }
  const Eigen::MatrixXd& samples() const { return samples_; }

  double density(std::span<const double> q) const { return std::exp(log_density(q)); }

  double log_density(std::span<const double> q) const {
    const Eigen::VectorXd e = exponents(q);
    const double top = e.maxCoeff();
    return log_norm_ + top + std::log((e.array() - top).exp().sum());
  }

  // ∇ ln ρ̂(q), written into `out`. Returns ln ρ̂(q).
  double log_density_gradient(std::span<const double> q, std::span<double> out) const {
    const Eigen::VectorXd e = exponents(q);
    const double top = e.maxCoeff();
    const Eigen::ArrayXd w = (e.array() - top).exp();
    const double total = w.sum();
    const Eigen::Map<const Eigen::VectorXd> qv(q.data(), dim());
    const Eigen::VectorXd mean = samples_ * (w.matrix() / total);
    Eigen::Map<Eigen::VectorXd>(out.data(), dim()) = (mean - qv) / (width_ * width_);
    return log_norm_ + top + std::log(total);
  }

 private:
  Eigen::VectorXd exponents(std::span<const double> q) const {
    if (static_cast<int>(q.size()) != dim())
      throw std::invalid_argument("KdeEstimator: query dimension mismatch");
    const Eigen::Map<const Eigen::VectorXd> qv(q.data(), dim());
    return -(samples_.colwise() - qv).colwise().squaredNorm().transpose() /
               (2.0 * width_ * width_);
  }

  Eigen::MatrixXd samples_;
  double scale_;
  double bandwidth_ = 0.0;
  double width_ = 0.0;
  double log_norm_ = 0.0;
};

}  // namespace apac
