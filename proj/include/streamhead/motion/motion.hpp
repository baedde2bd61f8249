#pragma once

// Identity-agnostic facial motion space: 21 implicit keypoints, expression
// deformation, head pose and translation, packed into a 265-D vector.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/error.hpp"

namespace streamhead::motion {

inline constexpr int kNumKeypoints = 21;
inline constexpr int kDeltaDims = kNumKeypoints * 3;  // 63
inline constexpr int kNumBins = 66;
inline constexpr int kMotionDims = 265;

// Packed layout offsets.
inline constexpr int kDeltaOffset = 0;
inline constexpr int kYawOffset = 63;
inline constexpr int kPitchOffset = 129;
inline constexpr int kRollOffset = 195;
inline constexpr int kTranslationOffset = 261;
inline constexpr int kScaleIndex = 264;
static_assert(kScaleIndex + 1 == kMotionDims);
static_assert(kRollOffset + kNumBins == kTranslationOffset);

inline constexpr double kBinWidthDeg = 3.0;
inline constexpr double kFirstBinCenterDeg = -97.5;
inline constexpr double kBinSigmaDeg = 3.0;
inline constexpr double kMaxAbsAngleDeg = 99.0;

inline constexpr std::string_view kLayoutId = "d63-yaw66-pitch66-roll66-t3-s1";

using KeypointMatrix = Eigen::Matrix<double, kNumKeypoints, 3, Eigen::RowMajor>;
using Rotation = Eigen::Matrix3d;
using BinVector = Eigen::Matrix<double, kNumBins, 1>;
using MotionValues = Eigen::Matrix<double, kMotionDims, 1>;
using Keypoints2D = Eigen::Matrix<double, kNumKeypoints, 2, Eigen::RowMajor>;

/// Per-identity neutral geometry c.
struct CanonicalKeypoints {
  KeypointMatrix points = KeypointMatrix::Zero();
};

/// Posed keypoints x = c R + delta + t.
struct ImplicitKeypoints {
  KeypointMatrix points = KeypointMatrix::Zero();
};

/// Head pose in degrees.
struct EulerAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  friend bool operator==(const EulerAngles&, const EulerAngles&) = default;
};

struct MotionFrame {
  KeypointMatrix delta = KeypointMatrix::Zero();
  EulerAngles euler;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  friend bool operator==(const MotionFrame& a, const MotionFrame& b) {
    return a.delta == b.delta && a.euler == b.euler && a.translation == b.translation && a.scale == b.scale;
  }
};

/// The packed 265-D diffusion target. Bin blocks are probability vectors
/// after encoding but may hold arbitrary values mid-diffusion.
struct MotionVector {
  MotionValues values = MotionValues::Zero();

  static MotionVector from(std::span<const double> data) {
    require(data.size() == static_cast<std::size_t>(kMotionDims), ErrorKind::Shape,
            "motion vector must have " + std::to_string(kMotionDims) + " values, got " +
                std::to_string(data.size()));
    MotionVector v;
    std::copy(data.begin(), data.end(), v.values.data());
    return v;
  }

  template <typename Derived>
  static MotionVector from(const Eigen::DenseBase<Derived>& row) {
    require(row.size() == kMotionDims, ErrorKind::Shape,
            "motion vector must have " + std::to_string(kMotionDims) + " values, got " +
                std::to_string(row.size()));
    MotionVector v;
    for (Eigen::Index i = 0; i < kMotionDims; ++i) v.values(i) = static_cast<double>(row(i));
    return v;
  }

  auto delta() { return values.segment<kDeltaDims>(kDeltaOffset); }
  auto delta() const { return values.segment<kDeltaDims>(kDeltaOffset); }
  auto yaw_bins() const { return values.segment<kNumBins>(kYawOffset); }
  auto pitch_bins() const { return values.segment<kNumBins>(kPitchOffset); }
  auto roll_bins() const { return values.segment<kNumBins>(kRollOffset); }
  auto translation() const { return values.segment<3>(kTranslationOffset); }
  double scale() const { return values(kScaleIndex); }

  std::span<const double> span() const { return {values.data(), static_cast<std::size_t>(kMotionDims)}; }

  friend bool operator==(const MotionVector& a, const MotionVector& b) { return a.values == b.values; }
};

// ---------------------------------------------------------------------------
// Validation

inline bool all_finite(const auto& m) { return m.allFinite(); }

inline void validate(const CanonicalKeypoints& c) {
  require(c.points.allFinite(), ErrorKind::InvalidInput, "canonical keypoints contain non-finite values");
}

inline void validate(const MotionFrame& m) {
  require(m.delta.allFinite() && m.translation.allFinite() && std::isfinite(m.euler.yaw) &&
              std::isfinite(m.euler.pitch) && std::isfinite(m.euler.roll) && std::isfinite(m.scale),
          ErrorKind::InvalidInput, "motion frame contains non-finite values");
  for (double a : {m.euler.yaw, m.euler.pitch, m.euler.roll}) {
    require(std::abs(a) < kMaxAbsAngleDeg, ErrorKind::Range, "euler angle outside bin coverage (|a| < 99)");
  }
  require(m.scale > 0.0, ErrorKind::InvalidInput, "scale must be positive");
}

// ---------------------------------------------------------------------------
// Rotation and composition

inline double deg2rad(double deg) { return deg * 3.14159265358979323846 / 180.0; }

/// R = Rz(roll) * Ry(yaw) * Rx(pitch), applied to row vectors as p * R.
inline Rotation euler_to_rotation(double yaw, double pitch, double roll) {
  require(std::isfinite(yaw) && std::isfinite(pitch) && std::isfinite(roll), ErrorKind::InvalidInput,
          "euler angles must be finite");
  const double y = deg2rad(yaw), p = deg2rad(pitch), r = deg2rad(roll);
  Rotation rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(p), -std::sin(p), 0, std::sin(p), std::cos(p);
  ry << std::cos(y), 0, std::sin(y), 0, 1, 0, -std::sin(y), 0, std::cos(y);
  rz << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
  return rz * ry * rx;
}

inline Rotation euler_to_rotation(const EulerAngles& e) { return euler_to_rotation(e.yaw, e.pitch, e.roll); }

enum class ScaleMode { Ignore, Apply };

/// x = c R + delta + t; with ScaleMode::Apply, x = scale (c R + delta) + t.
inline ImplicitKeypoints compose_keypoints(const CanonicalKeypoints& c, const MotionFrame& m,
                                           ScaleMode mode = ScaleMode::Ignore) {
  validate(c);
  require(m.delta.allFinite() && m.translation.allFinite() && std::isfinite(m.scale), ErrorKind::InvalidInput,
          "motion frame contains non-finite values");
  const Rotation rot = euler_to_rotation(m.euler);
  ImplicitKeypoints x;
  x.points = c.points * rot + m.delta;
  if (mode == ScaleMode::Apply) x.points *= m.scale;
  x.points.rowwise() += m.translation.transpose();
  return x;
}

/// Orthographic render stub: drop z.
inline Keypoints2D project_orthographic(const ImplicitKeypoints& x) { return x.points.leftCols<2>(); }

// ---------------------------------------------------------------------------
// Pose bins

inline double bin_center(int i) { return kFirstBinCenterDeg + kBinWidthDeg * i; }

inline BinVector angle_to_bins(double angle_deg) {
  require(std::isfinite(angle_deg), ErrorKind::InvalidInput, "angle must be finite");
  require(std::abs(angle_deg) < kMaxAbsAngleDeg, ErrorKind::Range, "angle outside bin coverage (|a| < 99)");
  BinVector bins;
  for (int i = 0; i < kNumBins; ++i) {
    const double z = (bin_center(i) - angle_deg) / kBinSigmaDeg;
    bins(i) = std::exp(-0.5 * z * z);
  }
  return bins / bins.sum();
}

/// Expected angle over bin centers. Inputs that are not a probability vector
/// are softmax-normalized first.
template <typename Derived>
double bins_to_angle(const Eigen::MatrixBase<Derived>& raw) {
  require(raw.size() == kNumBins, ErrorKind::Shape, "bin vector must have 66 entries");
  require(raw.allFinite(), ErrorKind::InvalidInput, "bin vector contains non-finite values");
  BinVector p = raw.template cast<double>();
  if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9) {
    const double mx = p.maxCoeff();
    p = (p.array() - mx).exp().matrix();
    p /= p.sum();
  }
  double angle = 0.0;
  for (int i = 0; i < kNumBins; ++i) angle += p(i) * bin_center(i);
  return angle;
}

// ---------------------------------------------------------------------------
// Packing

inline MotionVector pack_motion(const MotionFrame& m) {
  validate(m);
  MotionVector v;
  for (int k = 0; k < kNumKeypoints; ++k)
    for (int a = 0; a < 3; ++a) v.values(kDeltaOffset + 3 * k + a) = m.delta(k, a);
  v.values.segment<kNumBins>(kYawOffset) = angle_to_bins(m.euler.yaw);
  v.values.segment<kNumBins>(kPitchOffset) = angle_to_bins(m.euler.pitch);
  v.values.segment<kNumBins>(kRollOffset) = angle_to_bins(m.euler.roll);
  v.values.segment<3>(kTranslationOffset) = m.translation;
  v.values(kScaleIndex) = m.scale;
  return v;
}

inline MotionFrame unpack_motion(const MotionVector& v) {
  require(v.values.allFinite(), ErrorKind::InvalidInput, "motion vector contains non-finite values");
  MotionFrame m;
  for (int k = 0; k < kNumKeypoints; ++k)
    for (int a = 0; a < 3; ++a) m.delta(k, a) = v.values(kDeltaOffset + 3 * k + a);
  m.euler.yaw = bins_to_angle(v.yaw_bins());
  m.euler.pitch = bins_to_angle(v.pitch_bins());
  m.euler.roll = bins_to_angle(v.roll_bins());
  m.translation = v.translation();
  m.scale = v.scale();
  return m;
}

inline MotionFrame unpack_motion(std::span<const double> values) { return unpack_motion(MotionVector::from(values)); }

inline MotionVector neutral_motion() { return pack_motion(MotionFrame{}); }

/// Clamps negative bin entries to zero and renormalizes each pose block, so
/// near-distributions from a generator decode to their expected angle rather
/// than through the softmax fallback. All-zero blocks become uniform.
inline MotionVector sanitize_pose_bins(const MotionVector& v) {
  MotionVector out = v;
  for (int off : {kYawOffset, kPitchOffset, kRollOffset}) {
    auto b = out.values.segment<kNumBins>(off);
    b = b.cwiseMax(0.0);
    const double s = b.sum();
    if (s > 0.0) b /= s;
    else b.setConstant(1.0 / kNumBins);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Keypoint template and left/right symmetry

/// Left/right keypoint pairing used by horizontal flip.
struct SymmetryPairing {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> self_indices;

  /// Index of each keypoint's mirror partner. Throws Config unless pairs and
  /// self indices partition {0..20}.
  std::array<int, kNumKeypoints> mirror_map() const {
    std::array<int, kNumKeypoints> map;
    map.fill(-1);
    auto claim = [&](int i, int partner) {
      require(i >= 0 && i < kNumKeypoints, ErrorKind::Config, "pairing index out of range");
      require(map[static_cast<std::size_t>(i)] == -1, ErrorKind::Config,
              "keypoint " + std::to_string(i) + " appears twice in pairing");
      map[static_cast<std::size_t>(i)] = partner;
    };
    for (auto [l, r] : pairs) {
      require(l != r, ErrorKind::Config, "a pair must join two distinct keypoints");
      claim(l, r);
      claim(r, l);
    }
    for (int s : self_indices) claim(s, s);
    for (int i = 0; i < kNumKeypoints; ++i)
      require(map[static_cast<std::size_t>(i)] != -1, ErrorKind::Config,
              "keypoint " + std::to_string(i) + " missing from pairing");
    return map;
  }

  void validate() const { (void)mirror_map(); }
};

enum Keypoint : int {
  kNoseTip = 0,
  kNoseBridge = 1,
  kChin = 2,
  kBrowLeft = 3,
  kBrowRight = 4,
  kCheekLeft = 5,
  kCheekRight = 6,
  kEyeOuterLeft = 7,
  kEyeOuterRight = 8,
  kPhiltrum = 9,
  kUpperLidLeft = 10,
  kUpperLidRight = 11,
  kLowerLidLeft = 12,
  kLowerLidRight = 13,
  kMouthCornerLeft = 14,
  kMouthCornerRight = 15,
  kUpperLip = 16,
  kJawLeft = 17,
  kJawRight = 18,
  kLowerLip = 19,
  kForehead = 20,
};

inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "nose_tip",        "nose_bridge",      "chin",           "brow_left",       "brow_right",
    "cheek_left",      "cheek_right",      "eye_outer_left", "eye_outer_right", "philtrum",
    "upper_lid_left",  "upper_lid_right",  "lower_lid_left", "lower_lid_right", "mouth_corner_left",
    "mouth_corner_right", "upper_lip",     "jaw_left",       "jaw_right",       "lower_lip",
    "forehead"};

inline SymmetryPairing default_pairing() {
  return SymmetryPairing{
      {{kBrowLeft, kBrowRight},
       {kCheekLeft, kCheekRight},
       {kEyeOuterLeft, kEyeOuterRight},
       {kUpperLidLeft, kUpperLidRight},
       {kLowerLidLeft, kLowerLidRight},
       {kMouthCornerLeft, kMouthCornerRight},
       {kJawLeft, kJawRight}},
      {kNoseTip, kNoseBridge, kChin, kPhiltrum, kUpperLip, kLowerLip, kForehead}};
}

/// Mirror-symmetric neutral face in image-style axes (x right, y down, z
/// toward the camera).
/// The subject's right side sits at negative x.
inline CanonicalKeypoints template_keypoints() {
  CanonicalKeypoints c;
  c.points << 0.00, 0.00, 0.25,   // nose tip
      0.00, -0.15, 0.15,           // nose bridge
      0.00, 0.45, 0.05,          // chin
      0.25, -0.30, 0.08,           // brow L
      -0.25, -0.30, 0.08,          // brow R
      0.33, 0.10, 0.02,          // cheek L
      -0.33, 0.10, 0.02,         // cheek R
      0.30, -0.17, 0.05,           // eye outer L
      -0.30, -0.17, 0.05,          // eye outer R
      0.00, 0.12, 0.20,          // philtrum
      0.18, -0.20, 0.10,           // upper lid L
      -0.18, -0.20, 0.10,          // upper lid R
      0.18, -0.14, 0.10,           // lower lid L
      -0.18, -0.14, 0.10,          // lower lid R
      0.13, 0.24, 0.12,          // mouth corner L
      -0.13, 0.24, 0.12,         // mouth corner R
      0.00, 0.19, 0.17,          // upper lip
      0.36, 0.30, -0.05,         // jaw L
      -0.36, 0.30, -0.05,        // jaw R
      0.00, 0.29, 0.15,          // lower lip
      0.00, -0.45, 0.05;           // forehead
  return c;
}

/// Mirror a keypoint set across the x = 0 plane, swapping paired rows.
inline KeypointMatrix mirror_keypoints(const KeypointMatrix& points, const SymmetryPairing& pairing) {
  const auto map = pairing.mirror_map();
  KeypointMatrix out;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out.row(i) = points.row(map[static_cast<std::size_t>(i)]);
    out(i, 0) = -out(i, 0);
  }
  return out;
}

/// Horizontal flip: paired delta rows swap, x components negate, yaw and
/// roll negate, pitch is kept, translation x negates.
inline MotionFrame hflip_motion(const MotionFrame& m, const SymmetryPairing& pairing) {
  MotionFrame out = m;
  out.delta = mirror_keypoints(m.delta, pairing);
  out.euler.yaw = -m.euler.yaw;
  out.euler.roll = -m.euler.roll;
  out.translation.x() = -m.translation.x();
  return out;
}

/// Flip in packed space without re-encoding bins: bin centers are symmetric,
/// so negating an angle reverses its bin block exactly.
inline MotionVector hflip_vector(const MotionVector& v, const SymmetryPairing& pairing) {
  const auto map = pairing.mirror_map();
  MotionVector out = v;
  for (int k = 0; k < kNumKeypoints; ++k) {
    const int src = map[static_cast<std::size_t>(k)];
    for (int a = 0; a < 3; ++a) out.values(3 * k + a) = v.values(3 * src + a);
    out.values(3 * k) = -out.values(3 * k);
  }
  out.values.segment<kNumBins>(kYawOffset) = v.values.segment<kNumBins>(kYawOffset).reverse();
  out.values.segment<kNumBins>(kRollOffset) = v.values.segment<kNumBins>(kRollOffset).reverse();
  out.values(kTranslationOffset) = -v.values(kTranslationOffset);
  return out;
}

// ---------------------------------------------------------------------------
// Fine-grained control

/// Semantic regions over keypoints, used to build region masks.
enum class Region { Lips, Eyes, Brows, Cheeks, Jaw, Nose, Forehead };

inline std::vector<int> region_keypoints(Region r) {
  switch (r) {
    case Region::Lips: return {kMouthCornerLeft, kMouthCornerRight, kUpperLip, kLowerLip};
    case Region::Eyes: return {kEyeOuterLeft, kEyeOuterRight, kUpperLidLeft, kUpperLidRight, kLowerLidLeft, kLowerLidRight};
    case Region::Brows: return {kBrowLeft, kBrowRight};
    case Region::Cheeks: return {kCheekLeft, kCheekRight};
    case Region::Jaw: return {kChin, kJawLeft, kJawRight};
    case Region::Nose: return {kNoseTip, kNoseBridge, kPhiltrum};
    case Region::Forehead: return {kForehead};
  }
  return {};
}

using RegionMask = std::array<std::uint8_t, kDeltaDims>;

inline RegionMask full_mask() {
  RegionMask m;
  m.fill(1);
  return m;
}

/// Mask keeping only the given regions.
inline RegionMask mask_for(std::initializer_list<Region> keep) {
  RegionMask m{};
  for (Region r : keep)
    for (int k : region_keypoints(r))
      for (int a = 0; a < 3; ++a) m[static_cast<std::size_t>(3 * k + a)] = 1;
  return m;
}

struct PoseOverride {
  EulerAngles euler;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct ControlSpec {
  RegionMask region_mask = full_mask();
  std::optional<std::array<double, kDeltaDims>> magnitude_clamp;
  std::map<int, double> dim_offsets;
  std::optional<PoseOverride> pose_override;
  bool enabled = true;

  static ControlSpec with_scalar_clamp(double limit) {
    ControlSpec s;
    std::array<double, kDeltaDims> c;
    c.fill(limit);
    s.magnitude_clamp = c;
    return s;
  }

  void validate() const {
    for (auto m : region_mask) require(m == 0 || m == 1, ErrorKind::Config, "region mask entries must be 0 or 1");
    if (magnitude_clamp)
      for (double c : *magnitude_clamp)
        require(std::isfinite(c) && c >= 0.0, ErrorKind::Config, "magnitude clamp must be finite and >= 0");
    for (auto [dim, off] : dim_offsets) {
      require(dim >= 0 && dim < kDeltaDims, ErrorKind::Range,
              "offset dimension " + std::to_string(dim) + " outside [0, 63)");
      require(std::isfinite(off), ErrorKind::Config, "offset must be finite");
    }
    if (pose_override) {
      for (double a : {pose_override->euler.yaw, pose_override->euler.pitch, pose_override->euler.roll})
        require(std::isfinite(a) && std::abs(a) < kMaxAbsAngleDeg, ErrorKind::Range, "override angle out of range");
      require(pose_override->translation.allFinite(), ErrorKind::Config, "override translation must be finite");
    }
  }

  friend bool operator==(const ControlSpec& a, const ControlSpec& b) {
    const bool pose_eq = a.pose_override.has_value() == b.pose_override.has_value() &&
                         (!a.pose_override || (a.pose_override->euler == b.pose_override->euler &&
                                               a.pose_override->translation == b.pose_override->translation));
    return a.region_mask == b.region_mask && a.magnitude_clamp == b.magnitude_clamp &&
           a.dim_offsets == b.dim_offsets && pose_eq && a.enabled == b.enabled;
  }
};

/// Applies mask, then offsets, then clamp, then pose override. Works in
/// packed space so dimensions the spec does not touch stay bit-identical.
inline MotionVector apply_control(const MotionVector& v, const ControlSpec& spec) {
  spec.validate();
  if (!spec.enabled) return v;
  MotionVector out = v;
  for (int d = 0; d < kDeltaDims; ++d)
    if (spec.region_mask[static_cast<std::size_t>(d)] == 0) out.values(d) = 0.0;
  for (auto [dim, off] : spec.dim_offsets) out.values(dim) += off;
  if (spec.magnitude_clamp) {
    for (int d = 0; d < kDeltaDims; ++d) {
      const double c = (*spec.magnitude_clamp)[static_cast<std::size_t>(d)];
      out.values(d) = std::clamp(out.values(d), -c, c);
    }
  }
  if (spec.pose_override) {
    out.values.segment<kNumBins>(kYawOffset) = angle_to_bins(spec.pose_override->euler.yaw);
    out.values.segment<kNumBins>(kPitchOffset) = angle_to_bins(spec.pose_override->euler.pitch);
    out.values.segment<kNumBins>(kRollOffset) = angle_to_bins(spec.pose_override->euler.roll);
    out.values.segment<3>(kTranslationOffset) = spec.pose_override->translation;
  }
  return out;
}

inline MotionFrame apply_control(const MotionFrame& m, const ControlSpec& spec) {
  spec.validate();
  if (!spec.enabled) return m;
  MotionFrame out = m;
  for (int d = 0; d < kDeltaDims; ++d) {
    double& x = out.delta(d / 3, d % 3);
    if (spec.region_mask[static_cast<std::size_t>(d)] == 0) x = 0.0;
  }
  for (auto [dim, off] : spec.dim_offsets) out.delta(dim / 3, dim % 3) += off;
  if (spec.magnitude_clamp) {
    for (int d = 0; d < kDeltaDims; ++d) {
      const double c = (*spec.magnitude_clamp)[static_cast<std::size_t>(d)];
      double& x = out.delta(d / 3, d % 3);
      x = std::clamp(x, -c, c);
    }
  }
  if (spec.pose_override) {
    out.euler = spec.pose_override->euler;
    out.translation = spec.pose_override->translation;
  }
  return out;
}

}  // namespace streamhead::motion
