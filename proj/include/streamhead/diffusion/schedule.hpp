#pragma once

// Linear-beta noise schedule and the forward (noising) process.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/error.hpp"

namespace streamhead::diffusion {

struct NoiseSchedule {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> betas, alphas, alpha_bars;  // index t-1 for step t

  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    require(steps >= 1, ErrorKind::Config, "schedule needs at least one step");
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, ErrorKind::Config,
            "betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double bar = 1.0;
    for (int i = 0; i < steps; ++i) {
      const double b = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
      bar *= 1.0 - b;
      s.betas.push_back(b);
      s.alphas.push_back(1.0 - b);
      s.alpha_bars.push_back(bar);
    }
    return s;
  }

  void check_step(int t) const {
    require(t >= 1 && t <= T, ErrorKind::Range, "timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }

  double alpha_bar(int t) const {
    check_step(t);
    return alpha_bars[static_cast<std::size_t>(t - 1)];
  }
};

/// sqrt(abar_t) m0 + sqrt(1 - abar_t) eps
template <typename Derived, typename Derived2>
auto q_sample(const Eigen::MatrixBase<Derived>& m0, int t, const Eigen::MatrixBase<Derived2>& eps,
              const NoiseSchedule& s) {
  using Scalar = typename Derived::Scalar;
  require(m0.rows() == eps.rows() && m0.cols() == eps.cols(), ErrorKind::Shape, "noise shape does not match clip");
  const double ab = s.alpha_bar(t);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
      static_cast<Scalar>(std::sqrt(ab)) * m0 + static_cast<Scalar>(std::sqrt(1.0 - ab)) * eps;
  return out;
}

}  // namespace streamhead::diffusion
