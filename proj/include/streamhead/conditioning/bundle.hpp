#pragma once

// Condition bundle C = {a, e, c_ref, s, m_ref} and its two tensor forms:
// per-frame conditions (ECS) and the reference-motion input (ICS).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"

namespace streamhead::conditioning {

using Matrix = Eigen::MatrixXd;

inline constexpr int kDefaultFeatureWidth = 32;
inline constexpr int kEyeStateWidth = 6;
inline constexpr int kNumEmotions = 8;
inline constexpr double kMaxEyeAspect = 1.5;

struct AudioFeatureChunk {
  Matrix features;  // frames x F, 25 fps
  std::int64_t start_frame = 0;

  Eigen::Index frames() const { return features.rows(); }
  Eigen::Index width() const { return features.cols(); }
};

struct EyeState {
  double aspect_left = 0.3;
  double aspect_right = 0.3;
  Eigen::Vector2d pupil_left = Eigen::Vector2d::Zero();
  Eigen::Vector2d pupil_right = Eigen::Vector2d::Zero();

  void validate() const {
    for (double a : {aspect_left, aspect_right})
      require(std::isfinite(a) && a >= 0.0 && a <= kMaxEyeAspect, ErrorKind::Range, "eye aspect outside [0, 1.5]");
    for (const auto& p : {pupil_left, pupil_right})
      require(p.allFinite() && p.cwiseAbs().maxCoeff() <= 1.0, ErrorKind::Range, "pupil position outside [-1, 1]^2");
  }

  /// aspect_left, aspect_right, pupil_left.xy, pupil_right.xy
  std::array<double, kEyeStateWidth> flatten() const {
    return {aspect_left, aspect_right, pupil_left.x(), pupil_left.y(), pupil_right.x(), pupil_right.y()};
  }

  friend bool operator==(const EyeState&, const EyeState&) = default;
};

/// Six contour points around one eye plus the pupil centre, image coords.
struct EyeLandmarks {
  std::array<Eigen::Vector2d, 6> contour;
  Eigen::Vector2d pupil = Eigen::Vector2d::Zero();
};

struct EyeMeasure {
  double aspect = 0.0;
  Eigen::Vector2d pupil = Eigen::Vector2d::Zero();
};

/// aspect = vertical extent / horizontal extent; pupil offset from the
/// contour centroid in half-widths, clamped to [-1, 1].
inline EyeMeasure measure_eye(const EyeLandmarks& eye) {
  double min_x = eye.contour[0].x(), max_x = min_x, min_y = eye.contour[0].y(), max_y = min_y;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : eye.contour) {
    require(p.allFinite(), ErrorKind::InvalidInput, "eye landmark is not finite");
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
    centroid += p;
  }
  require(eye.pupil.allFinite(), ErrorKind::InvalidInput, "pupil landmark is not finite");
  centroid /= static_cast<double>(eye.contour.size());
  const double width = max_x - min_x;
  require(width > 0.0, ErrorKind::DegenerateGeometry, "eye contour has zero width");
  EyeMeasure m;
  m.aspect = std::clamp((max_y - min_y) / width, 0.0, kMaxEyeAspect);
  m.pupil = ((eye.pupil - centroid) / (0.5 * width)).cwiseMax(-1.0).cwiseMin(1.0);
  return m;
}

inline EyeState compute_eye_state(const EyeLandmarks& left, const EyeLandmarks& right) {
  const EyeMeasure l = measure_eye(left);
  const EyeMeasure r = measure_eye(right);
  return EyeState{l.aspect, r.aspect, l.pupil, r.pupil};
}

/// Builds an eye contour with the given aspect and pupil offset; the
/// inverse of measure_eye for unclamped inputs.
inline EyeLandmarks synth_eye_landmarks(const Eigen::Vector2d& center, double width, double aspect,
                                        const Eigen::Vector2d& pupil) {
  const double hw = 0.5 * width, hh = 0.5 * width * aspect;
  EyeLandmarks e;
  e.contour = {Eigen::Vector2d(center.x() - hw, center.y()),       Eigen::Vector2d(center.x() - 0.3 * hw, center.y() + hh),
               Eigen::Vector2d(center.x() + 0.3 * hw, center.y() + hh), Eigen::Vector2d(center.x() + hw, center.y()),
               Eigen::Vector2d(center.x() + 0.3 * hw, center.y() - hh), Eigen::Vector2d(center.x() - 0.3 * hw, center.y() - hh)};
  e.pupil = center + pupil * hw;
  return e;
}

struct EmotionLabel {
  int index = 0;

  void validate() const {
    require(index >= 0 && index < kNumEmotions, ErrorKind::Range, "emotion index outside [0, 8)");
  }

  Eigen::Matrix<double, kNumEmotions, 1> one_hot() const {
    validate();
    Eigen::Matrix<double, kNumEmotions, 1> v = Eigen::Matrix<double, kNumEmotions, 1>::Zero();
    v(index) = 1.0;
    return v;
  }

  friend bool operator==(const EmotionLabel&, const EmotionLabel&) = default;
};

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "neutral", "happy", "sad", "angry", "surprised", "fearful", "disgusted", "contempt"};

struct ConditionBundle {
  AudioFeatureChunk audio;
  std::vector<EyeState> eyes;
  motion::CanonicalKeypoints c_ref;
  EmotionLabel emotion;
  motion::MotionVector m_ref;

  Eigen::Index frames() const { return audio.frames(); }

  void validate() const {
    require(audio.frames() >= 1, ErrorKind::Shape, "condition bundle needs at least one frame");
    require(audio.features.allFinite(), ErrorKind::InvalidInput, "audio features are not finite");
    require(static_cast<Eigen::Index>(eyes.size()) == audio.frames(), ErrorKind::Shape,
            "eye-state sequence length does not match audio frames");
    for (const auto& e : eyes) e.validate();
    motion::validate(c_ref);
    emotion.validate();
    require(m_ref.values.allFinite(), ErrorKind::InvalidInput, "m_ref is not finite");
  }
};

// ECS column layout: [audio F | eye 6 | c_ref 63 | emotion one-hot 8].
inline constexpr int ecs_width(int feature_width) {
  return feature_width + kEyeStateWidth + motion::kDeltaDims + kNumEmotions;
}
inline constexpr int ecs_eye_offset(int feature_width) { return feature_width; }
inline constexpr int ecs_ckp_offset(int feature_width) { return feature_width + kEyeStateWidth; }
inline constexpr int ecs_emotion_offset(int feature_width) { return feature_width + kEyeStateWidth + motion::kDeltaDims; }

inline constexpr int kIcsWidth = 2 * motion::kMotionDims;

inline Matrix assemble_ecs(const AudioFeatureChunk& a, const std::vector<EyeState>& e,
                           const motion::CanonicalKeypoints& c_ref, const EmotionLabel& s, Eigen::Index frames) {
  require(a.frames() == frames, ErrorKind::Shape,
          "audio has " + std::to_string(a.frames()) + " frames, expected " + std::to_string(frames));
  require(static_cast<Eigen::Index>(e.size()) == frames, ErrorKind::Shape,
          "eye sequence has " + std::to_string(e.size()) + " frames, expected " + std::to_string(frames));
  s.validate();
  const int f = static_cast<int>(a.width());
  Matrix ecs(frames, ecs_width(f));
  ecs.leftCols(f) = a.features;
  const auto hot = s.one_hot();
  for (Eigen::Index i = 0; i < frames; ++i) {
    const auto eye = e[static_cast<std::size_t>(i)].flatten();
    for (int k = 0; k < kEyeStateWidth; ++k) ecs(i, ecs_eye_offset(f) + k) = eye[static_cast<std::size_t>(k)];
    for (int k = 0; k < motion::kDeltaDims; ++k) ecs(i, ecs_ckp_offset(f) + k) = c_ref.points(k / 3, k % 3);
    ecs.block(i, ecs_emotion_offset(f), 1, kNumEmotions) = hot.transpose();
  }
  return ecs;
}

inline Matrix assemble_ecs(const ConditionBundle& c) {
  return assemble_ecs(c.audio, c.eyes, c.c_ref, c.emotion, c.frames());
}

/// Each row is [noise row | m_ref].
template <typename Derived>
Matrix assemble_ics(const motion::MotionVector& m_ref, const Eigen::MatrixBase<Derived>& noise) {
  require(noise.cols() == motion::kMotionDims, ErrorKind::Shape, "noise must have 265 columns");
  require(noise.rows() >= 1, ErrorKind::Shape, "noise must have at least one row");
  Matrix ics(noise.rows(), kIcsWidth);
  ics.leftCols(motion::kMotionDims) = noise.template cast<double>();
  ics.rightCols(motion::kMotionDims) = m_ref.values.transpose().replicate(noise.rows(), 1);
  return ics;
}

/// Mirror a bundle to match horizontally flipped motion targets.
inline ConditionBundle flip_bundle(const ConditionBundle& c, const motion::SymmetryPairing& pairing) {
  ConditionBundle out = c;
  out.c_ref.points = motion::mirror_keypoints(c.c_ref.points, pairing);
  for (auto& e : out.eyes) {
    std::swap(e.aspect_left, e.aspect_right);
    std::swap(e.pupil_left, e.pupil_right);
    e.pupil_left.x() = -e.pupil_left.x();
    e.pupil_right.x() = -e.pupil_right.x();
  }
  out.m_ref = motion::hflip_vector(c.m_ref, pairing);
  return out;
}

}  // namespace streamhead::conditioning
