#include <gtest/gtest.h>

#include "streamhead/conditioning/bundle.hpp"
#include "test_support.hpp"

namespace streamhead::conditioning {
namespace {

EyeLandmarks square_eye(Eigen::Vector2d center, double side) {
  EyeLandmarks e;
  const double h = 0.5 * side;
  e.contour = {Eigen::Vector2d(center.x() - h, center.y() - h), Eigen::Vector2d(center.x(), center.y() - h),
               Eigen::Vector2d(center.x() + h, center.y() - h), Eigen::Vector2d(center.x() + h, center.y() + h),
               Eigen::Vector2d(center.x(), center.y() + h),     Eigen::Vector2d(center.x() - h, center.y() + h)};
  e.pupil = center;
  return e;
}

TEST(EyeState, SquareContourCenteredPupil) {
  const auto e = square_eye({3.0, -2.0}, 0.8);
  const EyeState s = compute_eye_state(e, e);
  EXPECT_DOUBLE_EQ(s.aspect_left, 1.0);
  EXPECT_DOUBLE_EQ(s.aspect_right, 1.0);
  EXPECT_NEAR(s.pupil_left.norm(), 0.0, 1e-15);
  EXPECT_NEAR(s.pupil_right.norm(), 0.0, 1e-15);
}

TEST(EyeState, CollapsedContourIsClosed) {
  auto e = square_eye({0.0, 0.0}, 1.0);
  for (auto& p : e.contour) p.y() = 0.25;
  EXPECT_DOUBLE_EQ(measure_eye(e).aspect, 0.0);
}

TEST(EyeState, HandComputedFixture) {
  EyeLandmarks e;
  e.contour = {Eigen::Vector2d(10.0, 5.0), Eigen::Vector2d(11.0, 4.2), Eigen::Vector2d(13.0, 4.0),
               Eigen::Vector2d(14.0, 5.1), Eigen::Vector2d(13.0, 6.0), Eigen::Vector2d(11.0, 5.9)};
  e.pupil = {12.5, 4.9};
  // width 4, height 2; centroid (12, 5.0333...)
  const double cx = (10 + 11 + 13 + 14 + 13 + 11) / 6.0, cy = (5.0 + 4.2 + 4.0 + 5.1 + 6.0 + 5.9) / 6.0;
  const EyeMeasure m = measure_eye(e);
  EXPECT_NEAR(m.aspect, 2.0 / 4.0, 1e-9);
  EXPECT_NEAR(m.pupil.x(), (12.5 - cx) / 2.0, 1e-9);
  EXPECT_NEAR(m.pupil.y(), (4.9 - cy) / 2.0, 1e-9);
}

TEST(EyeState, PupilClampedToUnitBox) {
  auto e = square_eye({0.0, 0.0}, 1.0);
  e.pupil = {5.0, -5.0};
  const auto m = measure_eye(e);
  EXPECT_DOUBLE_EQ(m.pupil.x(), 1.0);
  EXPECT_DOUBLE_EQ(m.pupil.y(), -1.0);
}

TEST(EyeState, ZeroWidthIsDegenerate) {
  auto e = square_eye({0.0, 0.0}, 1.0);
  for (auto& p : e.contour) p.x() = 0.3;
  try {
    measure_eye(e);
    FAIL() << "expected an error";
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::DegenerateGeometry);
  }
}

TEST(EyeState, AspectInvariantUnderScaleAndTranslation) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto base = synth_eye_landmarks({rng.uniform(-1, 1), rng.uniform(-1, 1)}, rng.uniform(0.1, 2.0),
                                          rng.uniform(0.0, 1.2), {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)});
    const double s = rng.uniform(0.05, 20.0);
    const Eigen::Vector2d shift(rng.uniform(-50, 50), rng.uniform(-50, 50));
    EyeLandmarks moved = base;
    for (auto& p : moved.contour) p = s * p + shift;
    moved.pupil = s * moved.pupil + shift;
    const auto a = measure_eye(base), b = measure_eye(moved);
    EXPECT_NEAR(a.aspect, b.aspect, 1e-9);
    EXPECT_NEAR((a.pupil - b.pupil).norm(), 0.0, 1e-9);
  }
}

TEST(EyeState, SynthesizedLandmarksInvertMeasurement) {
  const auto e = synth_eye_landmarks({0.2, 0.1}, 0.5, 0.31, {0.4, -0.2});
  const auto m = measure_eye(e);
  EXPECT_NEAR(m.aspect, 0.31, 1e-12);
  EXPECT_NEAR(m.pupil.x(), 0.4, 1e-12);
  EXPECT_NEAR(m.pupil.y(), -0.2, 1e-12);
}

ConditionBundle random_bundle(Rng& rng, int frames, int width = kDefaultFeatureWidth) {
  ConditionBundle c;
  c.audio.features = Matrix(frames, width);
  for (Eigen::Index i = 0; i < c.audio.features.size(); ++i) c.audio.features.data()[i] = rng.normal();
  for (int i = 0; i < frames; ++i) {
    EyeState e;
    e.aspect_left = rng.uniform(0.0, 1.5);
    e.aspect_right = rng.uniform(0.0, 1.5);
    e.pupil_left = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    e.pupil_right = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    c.eyes.push_back(e);
  }
  c.c_ref = fixtures::random_keypoints(rng);
  c.emotion.index = static_cast<int>(rng.below(kNumEmotions));
  c.m_ref = motion::pack_motion(fixtures::random_frame(rng));
  return c;
}

TEST(Ecs, SingleFrameWidth) {
  Rng rng(1);
  const auto c = random_bundle(rng, 1);
  const Matrix ecs = assemble_ecs(c);
  EXPECT_EQ(ecs.rows(), 1);
  EXPECT_EQ(ecs.cols(), kDefaultFeatureWidth + 6 + 63 + 8);
}

TEST(Ecs, WidthIndependentOfContent) {
  Rng rng(2);
  for (int frames : {1, 7, 80}) {
    const auto c = random_bundle(rng, frames);
    EXPECT_EQ(assemble_ecs(c).cols(), ecs_width(kDefaultFeatureWidth));
  }
}

TEST(Ecs, ConstantBlocksIdenticalAcrossRows) {
  Rng rng(3);
  const auto c = random_bundle(rng, 20);
  const Matrix ecs = assemble_ecs(c);
  const int f = kDefaultFeatureWidth;
  for (Eigen::Index i = 1; i < ecs.rows(); ++i) {
    EXPECT_EQ(ecs.row(i).segment(ecs_ckp_offset(f), 63 + 8), ecs.row(0).segment(ecs_ckp_offset(f), 63 + 8));
  }
}

TEST(Ecs, ColumnSlicesRecoverSources) {
  Rng rng(4);
  const auto c = random_bundle(rng, 12);
  const Matrix ecs = assemble_ecs(c);
  const int f = kDefaultFeatureWidth;
  EXPECT_EQ(Matrix(ecs.leftCols(f)), c.audio.features);
  for (int i = 0; i < 12; ++i) {
    const auto& e = c.eyes[static_cast<std::size_t>(i)];
    EXPECT_EQ(ecs(i, f + 0), e.aspect_left);
    EXPECT_EQ(ecs(i, f + 1), e.aspect_right);
    EXPECT_EQ(ecs(i, f + 2), e.pupil_left.x());
    EXPECT_EQ(ecs(i, f + 3), e.pupil_left.y());
    EXPECT_EQ(ecs(i, f + 4), e.pupil_right.x());
    EXPECT_EQ(ecs(i, f + 5), e.pupil_right.y());
    for (int k = 0; k < 21; ++k)
      for (int a = 0; a < 3; ++a) EXPECT_EQ(ecs(i, ecs_ckp_offset(f) + 3 * k + a), c.c_ref.points(k, a));
    for (int s = 0; s < kNumEmotions; ++s)
      EXPECT_EQ(ecs(i, ecs_emotion_offset(f) + s), s == c.emotion.index ? 1.0 : 0.0);
  }
}

TEST(Ecs, LengthMismatchIsShapeError) {
  Rng rng(5);
  auto c = random_bundle(rng, 10);
  c.eyes.pop_back();
  try {
    assemble_ecs(c);
    FAIL() << "expected an error";
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Shape);
  }
  try {
    assemble_ecs(c.audio, c.eyes, c.c_ref, c.emotion, 9);
    FAIL() << "expected an error";
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Shape);
  }
}

TEST(Ics, ZeroNoiseRows) {
  Rng rng(6);
  const auto m_ref = motion::pack_motion(fixtures::random_frame(rng));
  const Matrix ics = assemble_ics(m_ref, Matrix::Zero(5, 265));
  ASSERT_EQ(ics.rows(), 5);
  ASSERT_EQ(ics.cols(), 530);
  for (int i = 0; i < 5; ++i) {
    EXPECT_TRUE(ics.row(i).head(265).isZero(0.0));
    EXPECT_EQ(Eigen::VectorXd(ics.row(i).tail(265).transpose()), Eigen::VectorXd(m_ref.values));
  }
}

TEST(Ics, SingleRowAndSliceRecovery) {
  Rng rng(7);
  const auto m_ref = motion::pack_motion(fixtures::random_frame(rng));
  Matrix noise(1, 265);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
  const Matrix ics = assemble_ics(m_ref, noise);
  EXPECT_EQ(ics.rows(), 1);
  EXPECT_EQ(Matrix(ics.leftCols(265)), noise);

  Matrix many(9, 265);
  for (Eigen::Index i = 0; i < many.size(); ++i) many.data()[i] = rng.normal();
  const Matrix ics9 = assemble_ics(m_ref, many);
  EXPECT_EQ(Matrix(ics9.leftCols(265)), many);
  for (int i = 1; i < 9; ++i) EXPECT_EQ(ics9.row(i).tail(265), ics9.row(0).tail(265));
}

TEST(Ics, WrongWidthIsShapeError) {
  try {
    assemble_ics(motion::MotionVector{}, Matrix::Zero(3, 264));
    FAIL() << "expected an error";
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Shape);
  }
}

TEST(Bundle, FlipIsInvolution) {
  Rng rng(8);
  const auto pairing = motion::default_pairing();
  const auto c = random_bundle(rng, 6);
  const auto twice = flip_bundle(flip_bundle(c, pairing), pairing);
  EXPECT_EQ(twice.c_ref.points, c.c_ref.points);
  EXPECT_EQ(twice.m_ref, c.m_ref);
  for (std::size_t i = 0; i < c.eyes.size(); ++i) EXPECT_EQ(twice.eyes[i], c.eyes[i]);
  EXPECT_EQ(twice.audio.features, c.audio.features);
}

TEST(Bundle, FlipSwapsEyesAndMirrorsGaze) {
  ConditionBundle c;
  c.audio.features = Matrix::Zero(1, 4);
  EyeState e;
  e.aspect_left = 0.2;
  e.aspect_right = 0.4;
  e.pupil_left = {0.3, 0.1};
  e.pupil_right = {-0.5, 0.2};
  c.eyes = {e};
  const auto f = flip_bundle(c, motion::default_pairing());
  EXPECT_EQ(f.eyes[0].aspect_left, 0.4);
  EXPECT_EQ(f.eyes[0].aspect_right, 0.2);
  EXPECT_EQ(f.eyes[0].pupil_left, Eigen::Vector2d(0.5, 0.2));
  EXPECT_EQ(f.eyes[0].pupil_right, Eigen::Vector2d(-0.3, 0.1));
}

TEST(Bundle, ValidateRejectsOutOfRangeEye) {
  Rng rng(9);
  auto c = random_bundle(rng, 3);
  c.eyes[1].aspect_left = 1.6;
  EXPECT_THROW(c.validate(), Error);
  c.eyes[1].aspect_left = 0.3;
  c.emotion.index = 8;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace streamhead::conditioning
