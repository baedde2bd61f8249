#include <gtest/gtest.h>

#include <sstream>

#include <Eigen/Geometry>

#include "streamhead/motion/motion.hpp"
#include "streamhead/motion/motion_io.hpp"
#include "test_support.hpp"

using namespace streamhead;
using namespace streamhead::motion;

namespace {

// Per-row explicit matmul, independent of Eigen's product kernels.
KeypointMatrix compose_oracle(const KeypointMatrix& c, const Rotation& r, const KeypointMatrix& delta,
                              const Eigen::Vector3d& t) {
  KeypointMatrix x;
  for (int i = 0; i < kNumKeypoints; ++i) {
    for (int col = 0; col < 3; ++col) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += c(i, k) * r(k, col);
      x(i, col) = acc + delta(i, col) + t(col);
    }
  }
  return x;
}

Rotation rotation_oracle(double yaw, double pitch, double roll) {
  const double d = 3.14159265358979323846 / 180.0;
  return (Eigen::AngleAxisd(roll * d, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(yaw * d, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(pitch * d, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

// Brute-force mirror: swap left/right partners by name table, negate x.
KeypointMatrix mirror_oracle(const KeypointMatrix& x) {
  const int partner[kNumKeypoints] = {0, 1, 2, 4, 3, 6, 5, 8, 7, 9, 11, 10, 13, 12, 15, 14, 16, 18, 17, 19, 20};
  KeypointMatrix out;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out(i, 0) = -x(partner[i], 0);
    out(i, 1) = x(partner[i], 1);
    out(i, 2) = x(partner[i], 2);
  }
  return out;
}

}  // namespace

TEST(Rotation, ZeroAnglesIsIdentity) { EXPECT_EQ(euler_to_rotation(0, 0, 0), Rotation::Identity()); }

TEST(Rotation, HalfTurnYawTwiceIsIdentity) {
  const Rotation r = euler_to_rotation(180, 0, 0);
  EXPECT_LT((r * r - Rotation::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rotation, OrthonormalWithUnitDeterminant) {
  Rng rng(7);
  for (int n = 0; n < 500; ++n) {
    const double y = rng.uniform(-180, 180), p = rng.uniform(-180, 180), r = rng.uniform(-180, 180);
    const Rotation rot = euler_to_rotation(y, p, r);
    EXPECT_LT((rot.transpose() * rot - Rotation::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(rot.determinant(), 1.0, 1e-12);
  }
  const Rotation fixed = euler_to_rotation(10, 20, 30);
  EXPECT_LT((fixed.transpose() * fixed - Rotation::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(fixed.determinant(), 1.0, 1e-12);
}

TEST(Rotation, MatchesAxisAngleComposition) {
  Rng rng(8);
  for (int n = 0; n < 100; ++n) {
    const double y = rng.uniform(-90, 90), p = rng.uniform(-90, 90), r = rng.uniform(-90, 90);
    EXPECT_LT((euler_to_rotation(y, p, r) - rotation_oracle(y, p, r)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Rotation, RejectsNonFinite) {
  EXPECT_THROW(euler_to_rotation(std::nan(""), 0, 0), Error);
}

TEST(Compose, IdentityMotionReturnsCanonical) {
  Rng rng(1);
  const auto c = fixtures::random_keypoints(rng);
  EXPECT_EQ(compose_keypoints(c, MotionFrame{}).points, c.points);
}

TEST(Compose, ZeroCanonicalGivesDeltaPlusTranslation) {
  Rng rng(2);
  MotionFrame m = fixtures::random_frame(rng);
  const auto x = compose_keypoints(CanonicalKeypoints{}, m);
  KeypointMatrix expected = m.delta;
  expected.rowwise() += m.translation.transpose();
  EXPECT_EQ(x.points, expected);
}

TEST(Compose, MatchesPerRowOracle) {
  Rng rng(3);
  const auto c = fixtures::random_keypoints(rng);
  MotionFrame m = fixtures::random_frame(rng);
  m.euler = {10, -5, 3};
  const auto x = compose_keypoints(c, m);
  const auto oracle = compose_oracle(c.points, rotation_oracle(10, -5, 3), m.delta, m.translation);
  EXPECT_LT((x.points - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Compose, ScaleOnlyAppliedInScaleMode) {
  Rng rng(4);
  const auto c = fixtures::random_keypoints(rng);
  MotionFrame m = fixtures::random_frame(rng);
  m.scale = 1.5;
  const auto plain = compose_keypoints(c, m);
  MotionFrame unit = m;
  unit.scale = 1.0;
  EXPECT_EQ(plain.points, compose_keypoints(c, unit).points);

  const auto scaled = compose_keypoints(c, m, ScaleMode::Apply);
  KeypointMatrix expected = 1.5 * (c.points * euler_to_rotation(m.euler) + m.delta);
  expected.rowwise() += m.translation.transpose();
  EXPECT_LT((scaled.points - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Compose, AffineInDelta) {
  Rng rng(5);
  for (int n = 0; n < 1000; ++n) {
    const auto c = fixtures::random_keypoints(rng);
    MotionFrame m1 = fixtures::random_frame(rng);
    MotionFrame m2 = m1;
    KeypointMatrix d2;
    for (int i = 0; i < kNumKeypoints; ++i)
      for (int a = 0; a < 3; ++a) d2(i, a) = 0.1 * rng.normal();
    m2.delta = m1.delta + d2;
    const KeypointMatrix diff = compose_keypoints(c, m2).points - compose_keypoints(c, m1).points;
    ASSERT_LT((diff - d2).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Compose, RejectsNonFinite) {
  CanonicalKeypoints c;
  c.points(3, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(compose_keypoints(c, MotionFrame{}), Error);
}

TEST(Bins, BinCenterPeaksAtBin33) {
  const BinVector b = angle_to_bins(1.5);
  Eigen::Index argmax;
  b.maxCoeff(&argmax);
  EXPECT_EQ(argmax, 33);
  EXPECT_NEAR(bins_to_angle(b), 1.5, 0.05);
  EXPECT_NEAR(b.sum(), 1.0, 1e-12);
}

TEST(Bins, ZeroIsSymmetric) {
  const BinVector b = angle_to_bins(0.0);
  EXPECT_NEAR(b(32), b(33), 1e-15);
  EXPECT_LT((b - b.reverse()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(bins_to_angle(b), 0.0, 0.05);
}

TEST(Bins, DecodeRoundTrip) { EXPECT_NEAR(bins_to_angle(angle_to_bins(37.2)), 37.2, 0.1); }

TEST(Bins, OneHotDecodesToCenter) {
  for (int b : {0, 10, 33, 65}) {
    BinVector v = BinVector::Zero();
    v(b) = 1.0;
    EXPECT_DOUBLE_EQ(bins_to_angle(v), -97.5 + 3.0 * b);
  }
}

TEST(Bins, UniformDecodesToZero) {
  const BinVector v = BinVector::Constant(1.0 / 66.0);
  EXPECT_NEAR(bins_to_angle(v), 0.0, 1e-12);
}

TEST(Bins, SoftVectorMatchesDirectExpectation) {
  Rng rng(11);
  for (int n = 0; n < 50; ++n) {
    BinVector p;
    for (int i = 0; i < 66; ++i) p(i) = rng.uniform();
    p /= p.sum();
    double expected = 0.0;
    for (int i = 0; i < 66; ++i) expected += p(i) * (-97.5 + 3.0 * i);
    EXPECT_NEAR(bins_to_angle(p), expected, 1e-12);
  }
}

TEST(Bins, NegativeEntriesAreSoftmaxed) {
  BinVector v = BinVector::Constant(-5.0);
  v(40) = 5.0;
  // Softmax of this vector is dominated by bin 40.
  double denom = 65.0 * std::exp(-10.0) + 1.0;
  double expected = 0.0;
  for (int i = 0; i < 66; ++i) expected += (i == 40 ? 1.0 : std::exp(-10.0)) / denom * (-97.5 + 3.0 * i);
  EXPECT_NEAR(bins_to_angle(v), expected, 1e-12);
}

TEST(Bins, OutOfRangeAngleThrows) {
  EXPECT_THROW(angle_to_bins(99.0), Error);
  EXPECT_THROW(angle_to_bins(-120.0), Error);
  try {
    angle_to_bins(100.0);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Range);
  }
}

TEST(Pack, NeutralFrameLayout) {
  const MotionVector v = pack_motion(MotionFrame{});
  EXPECT_TRUE(v.delta().isZero(0.0));
  EXPECT_LT((v.yaw_bins() - v.yaw_bins().reverse()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((v.pitch_bins() - v.pitch_bins().reverse()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((v.roll_bins() - v.roll_bins().reverse()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(v.values(264), 1.0);
}

TEST(Pack, DeltaIsKeypointMajor) {
  MotionFrame m;
  m.delta(15, 0) = 0.25;
  m.delta(19, 1) = -0.5;
  const MotionVector v = pack_motion(m);
  EXPECT_EQ(v.values(45), 0.25);
  EXPECT_EQ(v.values(58), -0.5);
}

TEST(Pack, RoundTripOnRandomFrames) {
  Rng rng(12);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const MotionFrame m = fixtures::random_frame(rng);
    const MotionFrame back = unpack_motion(pack_motion(m));
    ASSERT_EQ(back.delta, m.delta);
    ASSERT_EQ(back.translation, m.translation);
    ASSERT_EQ(back.scale, m.scale);
    worst = std::max({worst, std::abs(back.euler.yaw - m.euler.yaw), std::abs(back.euler.pitch - m.euler.pitch),
                      std::abs(back.euler.roll - m.euler.roll)});
  }
  EXPECT_LE(worst, 0.1);
}

TEST(Pack, WrongLengthIsShapeError) {
  std::vector<double> short_vec(264, 0.0);
  try {
    (void)unpack_motion(short_vec);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Pack, InvalidFrameRejected) {
  MotionFrame m;
  m.scale = 0.0;
  EXPECT_THROW(pack_motion(m), Error);
  m.scale = 1.0;
  m.euler.yaw = 100.0;
  EXPECT_THROW(pack_motion(m), Error);
}

TEST(Flip, TemplateIsMirrorSymmetric) {
  const auto c = template_keypoints();
  EXPECT_EQ(mirror_oracle(c.points), c.points);
}

TEST(Flip, InvolutionExact) {
  Rng rng(13);
  const auto pairing = default_pairing();
  for (int n = 0; n < 200; ++n) {
    const MotionFrame m = fixtures::random_frame(rng);
    EXPECT_EQ(hflip_motion(hflip_motion(m, pairing), pairing), m);
    const MotionVector v = pack_motion(m);
    EXPECT_EQ(hflip_vector(hflip_vector(v, pairing), pairing), v);
  }
}

TEST(Flip, SymmetricFrameIsFixedPoint) {
  const auto pairing = default_pairing();
  MotionFrame m;
  m.delta = 0.1 * template_keypoints().points;  // mirror-symmetric rows
  m.euler = {0.0, 12.0, 0.0};
  m.translation = {0.0, 0.02, -0.01};
  EXPECT_EQ(hflip_motion(m, pairing), m);
}

TEST(Flip, MatchesGeometricMirror) {
  Rng rng(14);
  const auto pairing = default_pairing();
  const auto c_sym = template_keypoints();
  for (int n = 0; n < 200; ++n) {
    const MotionFrame m = fixtures::random_frame(rng);
    const auto flipped = compose_keypoints(c_sym, hflip_motion(m, pairing));
    const auto mirrored = mirror_oracle(compose_keypoints(c_sym, m).points);
    ASSERT_LT((flipped.points - mirrored).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Flip, PackedFlipAgreesWithFrameFlip) {
  Rng rng(15);
  const auto pairing = default_pairing();
  for (int n = 0; n < 50; ++n) {
    const MotionFrame m = fixtures::random_frame(rng, 80.0);
    const MotionVector a = hflip_vector(pack_motion(m), pairing);
    const MotionVector b = pack_motion(hflip_motion(m, pairing));
    EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Flip, InvalidPairingIsConfigError) {
  SymmetryPairing bad = default_pairing();
  bad.pairs[0] = {3, 5};  // 5 now appears twice
  try {
    (void)hflip_motion(MotionFrame{}, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  SymmetryPairing missing = default_pairing();
  missing.self_indices.pop_back();
  EXPECT_THROW(missing.validate(), Error);
}

TEST(Control, EmptySpecIsIdentity) {
  Rng rng(16);
  const MotionFrame m = fixtures::random_frame(rng);
  EXPECT_EQ(apply_control(m, ControlSpec{}), m);
  const MotionVector v = pack_motion(m);
  EXPECT_EQ(apply_control(v, ControlSpec{}), v);
}

TEST(Control, OffsetTouchesOnlyItsDimension) {
  Rng rng(17);
  const MotionVector v = pack_motion(fixtures::random_frame(rng));
  for (int d : {0, 33, 34, 45, 58, 62}) {
    ControlSpec spec;
    spec.dim_offsets[d] = 0.1;
    const MotionVector out = apply_control(v, spec);
    for (int i = 0; i < kMotionDims; ++i) {
      if (i == d)
        EXPECT_EQ(out.values(i), v.values(i) + 0.1);
      else
        EXPECT_EQ(out.values(i), v.values(i)) << "dim " << i;
    }
  }
}

TEST(Control, ClampIsSignPreserving) {
  MotionFrame m;
  m.delta(2, 1) = 0.2;
  m.delta(4, 0) = -0.2;
  m.delta(5, 2) = 0.01;
  const MotionFrame out = apply_control(m, ControlSpec::with_scalar_clamp(0.05));
  EXPECT_EQ(out.delta(2, 1), 0.05);
  EXPECT_EQ(out.delta(4, 0), -0.05);
  EXPECT_EQ(out.delta(5, 2), 0.01);
}

TEST(Control, MaskZeroesBeforeOffsets) {
  Rng rng(18);
  const MotionVector v = pack_motion(fixtures::random_frame(rng));
  ControlSpec spec;
  spec.region_mask = mask_for({Region::Lips});
  spec.dim_offsets[3] = 0.07;  // nose bridge x, masked out
  const MotionVector out = apply_control(v, spec);
  for (int d = 0; d < kDeltaDims; ++d) {
    if (d == 3)
      EXPECT_EQ(out.values(d), 0.07);
    else if (spec.region_mask[d] == 0)
      EXPECT_EQ(out.values(d), 0.0);
    else
      EXPECT_EQ(out.values(d), v.values(d));
  }
  EXPECT_EQ(out.values.tail<kMotionDims - kDeltaDims>(), v.values.tail<kMotionDims - kDeltaDims>());
}

TEST(Control, OffsetThenClamp) {
  MotionFrame m;
  ControlSpec spec = ControlSpec::with_scalar_clamp(0.05);
  spec.dim_offsets[58] = 0.1;
  const MotionFrame out = apply_control(m, spec);
  EXPECT_EQ(out.delta(19, 1), 0.05);
}

TEST(Control, PoseOverrideReplacesPose) {
  Rng rng(19);
  const MotionFrame m = fixtures::random_frame(rng);
  ControlSpec spec;
  spec.pose_override = PoseOverride{{5.0, -3.0, 1.0}, {0.01, 0.02, 0.03}};
  const MotionFrame out = apply_control(m, spec);
  EXPECT_EQ(out.delta, m.delta);
  EXPECT_EQ(out.euler, (EulerAngles{5.0, -3.0, 1.0}));
  EXPECT_EQ(out.translation, Eigen::Vector3d(0.01, 0.02, 0.03));
  const MotionVector packed = apply_control(pack_motion(m), spec);
  EXPECT_NEAR(bins_to_angle(packed.yaw_bins()), 5.0, 0.05);
}

TEST(Control, DisabledSpecIsIdentity) {
  Rng rng(20);
  const MotionVector v = pack_motion(fixtures::random_frame(rng));
  ControlSpec spec;
  spec.region_mask.fill(0);
  spec.enabled = false;
  EXPECT_EQ(apply_control(v, spec), v);
}

TEST(Control, OffsetOutOfRangeIsRangeError) {
  ControlSpec spec;
  spec.dim_offsets[63] = 0.1;
  try {
    (void)apply_control(MotionFrame{}, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Range);
  }
}

TEST(MotionFile, RoundTrip) {
  Rng rng(21);
  MotionSequence seq;
  for (int i = 0; i < 5; ++i) seq.frames.push_back(IndexedMotion{i, pack_motion(fixtures::random_frame(rng))});
  std::stringstream ss;
  write_motion_jsonl(ss, seq);
  const MotionSequence back = read_motion_jsonl(ss);
  ASSERT_EQ(back.frames.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(back.frames[i].frame_index, i);
    EXPECT_EQ(back.frames[i].values, seq.frames[i].values);
  }
}

TEST(MotionFile, RejectsMismatchedHeader) {
  for (const char* header : {R"({"format_version":1,"fps":25,"K":21,"dims":264,"layout_id":"d63-yaw66-pitch66-roll66-t3-s1"})",
                             R"({"format_version":1,"fps":25,"K":21,"dims":265,"layout_id":"other"})"}) {
    std::stringstream ss;
    ss << header << '\n';
    EXPECT_THROW(read_motion_jsonl(ss), Error);
  }
}
