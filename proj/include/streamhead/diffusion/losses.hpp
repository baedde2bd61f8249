#pragma once

// Training objectives on clips (L x 265): grouped reconstruction, temporal
// velocity/acceleration matching, first-frame anchoring to the reference, and
// the adaptive per-group weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"

namespace streamhead::diffusion {

enum class Group { Deformation = 0, PoseBins = 1, Translation = 2 };
inline constexpr int kNumGroups = 3;
inline constexpr std::array<const char*, kNumGroups> kGroupNames = {"deformation", "pose_bins", "translation"};

/// Translation and scale share a group.
inline constexpr int group_of(int dim) {
  return dim < motion::kYawOffset ? 0 : dim < motion::kTranslationOffset ? 1 : 2;
}
inline constexpr std::array<int, kNumGroups + 1> kGroupBounds = {0, motion::kYawOffset, motion::kTranslationOffset,
                                                                 motion::kMotionDims};
inline constexpr int group_size(int g) { return kGroupBounds[g + 1] - kGroupBounds[g]; }

using GroupVector = Eigen::Vector3d;

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Shape, "clip shapes differ");
  require(a.cols() == motion::kMotionDims, ErrorKind::Shape, "clips must have 265 columns");
}

/// Mean squared error within each group, averaged over frames.
template <typename A, typename B>
GroupVector group_mse(const Eigen::MatrixBase<A>& m_hat, const Eigen::MatrixBase<B>& m0) {
  require_same_shape(m_hat, m0);
  GroupVector out;
  for (int g = 0; g < kNumGroups; ++g) {
    const auto d = (m_hat.middleCols(kGroupBounds[g], group_size(g)) - m0.middleCols(kGroupBounds[g], group_size(g)))
                       .template cast<double>();
    out(g) = d.squaredNorm() / static_cast<double>(d.size());
  }
  return out;
}

/// Mean of the three group MSEs; the validation metric.
template <typename A, typename B>
double grouped_mse(const Eigen::MatrixBase<A>& m_hat, const Eigen::MatrixBase<B>& m0) {
  return group_mse(m_hat, m0).mean();
}

/// (1 / (L * 265)) * sum_g w_g * (squared error over group g). Each group's
/// term is its MSE scaled by its share of the dimensions, so w = (1, 1, 1)
/// is the flat MSE.
template <typename A, typename B>
double loss_denoise(const Eigen::MatrixBase<A>& m_hat, const Eigen::MatrixBase<B>& m0, const GroupVector& w) {
  const GroupVector mse = group_mse(m_hat, m0);
  double total = 0.0;
  for (int g = 0; g < kNumGroups; ++g) total += w(g) * mse(g) * group_size(g);
  return total / motion::kMotionDims;
}

/// mean((D m_hat - D m)^2) + mean((D2 m_hat - D2 m)^2) with forward differences.
template <typename A, typename B>
double loss_temporal(const Eigen::MatrixBase<A>& m_hat, const Eigen::MatrixBase<B>& m) {
  require_same_shape(m_hat, m);
  const Eigen::Index L = m.rows();
  require(L >= 3, ErrorKind::Length, "temporal loss needs at least 3 frames, got " + std::to_string(L));
  const Eigen::MatrixXd e = (m_hat - m).template cast<double>();
  const Eigen::MatrixXd v = e.bottomRows(L - 1) - e.topRows(L - 1);
  const Eigen::MatrixXd a = v.bottomRows(L - 2) - v.topRows(L - 2);
  return v.squaredNorm() / static_cast<double>(v.size()) + a.squaredNorm() / static_cast<double>(a.size());
}

template <typename A, typename B>
double loss_initial(const Eigen::MatrixBase<A>& m_hat_first, const Eigen::MatrixBase<B>& m_ref) {
  require(m_hat_first.size() == motion::kMotionDims && m_ref.size() == motion::kMotionDims, ErrorKind::Shape,
          "initial loss expects two 265-vectors");
  double s = 0.0;
  for (Eigen::Index i = 0; i < motion::kMotionDims; ++i) {
    const double d = static_cast<double>(m_hat_first(i)) - static_cast<double>(m_ref(i));
    s += d * d;
  }
  return s / motion::kMotionDims;
}

struct LossTerms {
  double denoise = 0.0;
  double temporal = 0.0;
  double initial = 0.0;
  double total() const { return denoise + temporal + initial; }
};

inline double total_loss(const LossTerms& t) { return t.total(); }

/// All three terms for one predicted clip; `m_ref` is a 265-vector.
template <typename A, typename B, typename C>
LossTerms compute_losses(const Eigen::MatrixBase<A>& m_hat, const Eigen::MatrixBase<B>& m0,
                         const Eigen::MatrixBase<C>& m_ref, const GroupVector& w) {
  LossTerms t;
  t.denoise = loss_denoise(m_hat, m0, w);
  t.temporal = loss_temporal(m_hat, m0);
  t.initial = loss_initial(m_hat.row(0), m_ref);
  return t;
}

/// d(total loss)/d(m_hat), same shape as m_hat.
template <typename Scalar, typename A, typename B, typename C>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> loss_gradient(const Eigen::MatrixBase<A>& m_hat,
                                                                    const Eigen::MatrixBase<B>& m0,
                                                                    const Eigen::MatrixBase<C>& m_ref,
                                                                    const GroupVector& w) {
  require_same_shape(m_hat, m0);
  const Eigen::Index L = m0.rows();
  require(L >= 3, ErrorKind::Length, "temporal loss needs at least 3 frames");
  const Eigen::MatrixXd e = (m_hat - m0).template cast<double>();
  Eigen::MatrixXd grad(L, motion::kMotionDims);
  const double n = static_cast<double>(L) * motion::kMotionDims;
  for (int g = 0; g < kNumGroups; ++g)
    grad.middleCols(kGroupBounds[g], group_size(g)) = (2.0 * w(g) / n) * e.middleCols(kGroupBounds[g], group_size(g));

  const Eigen::MatrixXd v = e.bottomRows(L - 1) - e.topRows(L - 1);
  const Eigen::MatrixXd a = v.bottomRows(L - 2) - v.topRows(L - 2);
  const Eigen::MatrixXd gv = (2.0 / static_cast<double>(v.size())) * v;
  const Eigen::MatrixXd ga = (2.0 / static_cast<double>(a.size())) * a;
  grad.bottomRows(L - 1) += gv;
  grad.topRows(L - 1) -= gv;
  grad.bottomRows(L - 2) += ga;
  grad.middleRows(1, L - 2) -= 2.0 * ga;
  grad.topRows(L - 2) += ga;

  for (Eigen::Index i = 0; i < motion::kMotionDims; ++i)
    grad(0, i) += 2.0 * (static_cast<double>(m_hat(0, i)) - static_cast<double>(m_ref(i))) / motion::kMotionDims;
  return grad.cast<Scalar>();
}

// ---------------------------------------------------------------------------
// Adaptive group weights

inline constexpr double kMinGroupWeight = 0.1;
inline constexpr double kMaxGroupWeight = 10.0;

struct LossWeightsState {
  GroupVector weights = GroupVector::Ones();
  GroupVector ema_losses = GroupVector::Zero();
  double update_rate = 0.3;
};

/// Weights proportional to `ema`, summing to 3, each clipped to
/// [0.1, 10]; clipped groups are pinned and the rest rescaled until stable.
inline GroupVector proportional_weights(const GroupVector& ema) {
  if (!(ema.sum() > 0.0)) return GroupVector::Ones();
  GroupVector w = GroupVector::Zero();
  std::array<bool, kNumGroups> pinned{};
  for (int iter = 0; iter < kNumGroups + 1; ++iter) {
    double free_budget = 3.0, free_mass = 0.0;
    for (int g = 0; g < kNumGroups; ++g) {
      if (pinned[g]) free_budget -= w(g);
      else free_mass += ema(g);
    }
    bool changed = false;
    for (int g = 0; g < kNumGroups; ++g) {
      if (pinned[g]) continue;
      w(g) = free_mass > 0.0 ? free_budget * ema(g) / free_mass : kMinGroupWeight;
    }
    for (int g = 0; g < kNumGroups; ++g) {
      if (pinned[g]) continue;
      if (w(g) < kMinGroupWeight) {
        w(g) = kMinGroupWeight;
        pinned[g] = changed = true;
      } else if (w(g) > kMaxGroupWeight) {
        w(g) = kMaxGroupWeight;
        pinned[g] = changed = true;
      }
    }
    if (!changed) break;
  }
  return w;
}

inline LossWeightsState update_adaptive_weights(const GroupVector& group_losses, LossWeightsState state) {
  require(group_losses.allFinite() && (group_losses.array() >= 0.0).all(), ErrorKind::InvalidInput,
          "group losses must be finite and non-negative");
  require(state.update_rate > 0.0 && state.update_rate <= 1.0, ErrorKind::Config, "update rate must be in (0, 1]");
  state.ema_losses = (1.0 - state.update_rate) * state.ema_losses + state.update_rate * group_losses;
  state.weights = proportional_weights(state.ema_losses);
  return state;
}

}  // namespace streamhead::diffusion
