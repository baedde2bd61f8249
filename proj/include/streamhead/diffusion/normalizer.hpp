#pragma once

// Affine normalization of motion clips: per-dimension mean, one shared
// standard deviation per loss group. Sharing the scale inside a group keeps
// near-constant dims (far-off pose bins) from being blown up.

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "streamhead/diffusion/losses.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"

namespace streamhead::diffusion {

struct Normalizer {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(motion::kMotionDims);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(motion::kMotionDims);

  /// Fit on stacked frames (N x 265).
  static Normalizer fit(const Eigen::MatrixXd& frames, double floor = 1e-6) {
    require(frames.cols() == motion::kMotionDims && frames.rows() >= 1, ErrorKind::Shape,
            "normalizer needs at least one 265-D frame");
    Normalizer n;
    n.mean = frames.colwise().mean().transpose();
    const Eigen::MatrixXd centered = frames.rowwise() - n.mean.transpose();
    const Eigen::VectorXd var = centered.colwise().squaredNorm().transpose() / static_cast<double>(frames.rows());
    for (int g = 0; g < kNumGroups; ++g) {
      const double s = std::sqrt(var.segment(kGroupBounds[g], group_size(g)).mean());
      n.scale.segment(kGroupBounds[g], group_size(g)).setConstant(std::max(s, floor));
    }
    return n;
  }

  template <typename Derived>
  Eigen::MatrixXd normalize(const Eigen::MatrixBase<Derived>& clip) const {
    require(clip.cols() == motion::kMotionDims, ErrorKind::Shape, "expected 265 columns");
    return (clip.template cast<double>().rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  template <typename Derived>
  Eigen::MatrixXd denormalize(const Eigen::MatrixBase<Derived>& clip) const {
    require(clip.cols() == motion::kMotionDims, ErrorKind::Shape, "expected 265 columns");
    return (clip.template cast<double>().array().rowwise() * scale.transpose().array()).matrix().rowwise() +
           mean.transpose();
  }

  Eigen::VectorXd normalize(const motion::MotionVector& v) const {
    return (v.values - mean).cwiseQuotient(scale);
  }
};

}  // namespace streamhead::diffusion
