#pragma once

// Deterministic reduced-step sampling with an x0-predicting denoiser. The
// ladder visits every (T / steps)-th timestep from T down; at each rung the
// denoiser's clean estimate and the implied noise are recombined at the next
// rung's noise level. No fresh noise is injected after the initial draw.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/diffusion/schedule.hpp"
#include "streamhead/error.hpp"
#include "streamhead/rng.hpp"

namespace streamhead::diffusion {

/// (x_t, t) -> predicted x0, both L x D.
using DenoiseFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)>;

/// Descending timesteps T, T - s, ..., s with stride s = T / steps.
inline std::vector<int> timestep_ladder(const NoiseSchedule& schedule, int steps) {
  require(steps >= 1 && steps <= schedule.T, ErrorKind::Range,
          "steps must be in [1, " + std::to_string(schedule.T) + "], got " + std::to_string(steps));
  require(schedule.T % steps == 0, ErrorKind::Range,
          "steps (" + std::to_string(steps) + ") must divide T (" + std::to_string(schedule.T) + ")");
  const int stride = schedule.T / steps;
  std::vector<int> ladder;
  for (int t = schedule.T; t >= stride; t -= stride) ladder.push_back(t);
  return ladder;
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

inline Eigen::MatrixXd sample(const DenoiseFn& denoise, const NoiseSchedule& schedule, Eigen::Index frames,
                              Eigen::Index dims, int steps, std::uint64_t seed) {
  const auto ladder = timestep_ladder(schedule, steps);
  Eigen::MatrixXd x = gaussian_matrix(frames, dims, seed);
  Eigen::MatrixXd x0;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const int t = ladder[i];
    x0 = denoise(x, t);
    require(x0.rows() == frames && x0.cols() == dims, ErrorKind::Shape, "denoiser returned the wrong shape");
    require(x0.allFinite(), ErrorKind::NumericalFailure, "denoiser produced non-finite values at t=" + std::to_string(t));
    if (i + 1 == ladder.size()) break;
    const double ab = schedule.alpha_bar(t);
    const double ab_next = schedule.alpha_bar(ladder[i + 1]);
    const Eigen::MatrixXd eps = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    x = std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps;
  }
  return x0;
}

}  // namespace streamhead::diffusion
