#include <cmath>
#include <cstdio>

#include <gtest/gtest.h>

#include "streamhead/diffusion/denoiser.hpp"
#include "streamhead/diffusion/losses.hpp"
#include "streamhead/diffusion/normalizer.hpp"
#include "streamhead/diffusion/sampler.hpp"
#include "streamhead/diffusion/schedule.hpp"
#include "streamhead/rng.hpp"

namespace streamhead::diffusion {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd random_clip(Rng& rng, Eigen::Index L, Eigen::Index D = 265) {
  MatrixXd m(L, D);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// --- schedule ---------------------------------------------------------------

TEST(Schedule, LinearDefaults) {
  const auto s = NoiseSchedule::linear();
  ASSERT_EQ(s.T, 1000);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
  EXPECT_GT(s.alpha_bar(1), 0.999);
  for (int t = 2; t <= s.T; ++t) {
    EXPECT_GE(s.betas[static_cast<std::size_t>(t - 1)], s.betas[static_cast<std::size_t>(t - 2)]);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_GT(s.alpha_bar(1000), 0.0);
}

TEST(QSample, ZeroNoiseScalesSignal) {
  Rng rng(1);
  const auto s = NoiseSchedule::linear();
  const MatrixXd m0 = random_clip(rng, 8);
  const MatrixXd out = q_sample(m0, 500, MatrixXd::Zero(8, 265), s);
  EXPECT_EQ(out, MatrixXd(std::sqrt(s.alpha_bar(500)) * m0));
}

TEST(QSample, FirstStepNearlyClean) {
  Rng rng(2);
  const auto s = NoiseSchedule::linear();
  MatrixXd m0 = random_clip(rng, 80);
  m0 /= m0.norm();
  const MatrixXd out = q_sample(m0, 1, MatrixXd::Zero(80, 265), s);
  EXPECT_LE((out - m0).norm(), 1e-3 * m0.norm());
}

TEST(QSample, StepOutOfRange) {
  const auto s = NoiseSchedule::linear();
  for (int t : {0, 1001, -3}) {
    try {
      q_sample(MatrixXd::Zero(2, 265), t, MatrixXd::Zero(2, 265), s);
      FAIL() << "expected a range error for t=" << t;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Range);
    }
  }
}

TEST(QSample, MonteCarloVariance) {
  const auto s = NoiseSchedule::linear();
  Rng rng(3);
  const MatrixXd m0 = MatrixXd::Constant(1, 1, 0.7);
  for (int t : {10, 250, 900}) {
    const int n = 100000;
    double sum = 0, sum2 = 0;
    MatrixXd eps(1, 1);
    for (int i = 0; i < n; ++i) {
      eps(0, 0) = rng.normal();
      const double v = q_sample(m0, t, eps, s)(0, 0);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n, var = sum2 / n - mean * mean;
    EXPECT_NEAR(var / (1.0 - s.alpha_bar(t)), 1.0, 0.02) << "t=" << t;
  }
}

TEST(QSample, EnergyProperty) {
  const auto s = NoiseSchedule::linear();
  Rng rng(4);
  const int L = 8, trials = 400, t = 300;
  double energy = 0, energy0 = 0;
  for (int i = 0; i < trials; ++i) {
    const MatrixXd m0 = random_clip(rng, L), eps = random_clip(rng, L);
    energy += q_sample(m0, t, eps, s).squaredNorm();
    energy0 += m0.squaredNorm();
  }
  energy /= trials;
  energy0 /= trials;
  const double expect = s.alpha_bar(t) * energy0 + (1.0 - s.alpha_bar(t)) * L * 265;
  EXPECT_NEAR(energy / expect, 1.0, 0.01);
}

// --- losses -----------------------------------------------------------------

TEST(Losses, DenoiseTrivialCases) {
  Rng rng(5);
  const MatrixXd m = random_clip(rng, 10);
  EXPECT_EQ(loss_denoise(m, m, GroupVector::Ones()), 0.0);
  EXPECT_NEAR(loss_denoise(MatrixXd(m.array() + 1.0), m, GroupVector::Ones()), 1.0, 1e-15);
}

TEST(Losses, DenoiseUnitWeightsIsFlatMse) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = random_clip(rng, 12), b = random_clip(rng, 12);
    double flat = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) flat += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    flat /= static_cast<double>(a.size());
    EXPECT_NEAR(loss_denoise(a, b, GroupVector::Ones()), flat, 1e-12);
  }
}

TEST(Losses, DenoiseGroupWeighting) {
  MatrixXd a = MatrixXd::Zero(2, 265), b = MatrixXd::Zero(2, 265);
  a.col(0).setConstant(1.0);    // deformation
  a.col(100).setConstant(1.0);  // pose bins
  a.col(262).setConstant(1.0);  // translation
  const GroupVector w(2.0, 0.5, 3.0);
  EXPECT_NEAR(loss_denoise(a, b, w), (2.0 * 2 + 0.5 * 2 + 3.0 * 2) / (2.0 * 265), 1e-15);
}

TEST(Losses, TemporalTrivialCases) {
  Rng rng(7);
  const MatrixXd m = random_clip(rng, 9);
  EXPECT_EQ(loss_temporal(m, m), 0.0);
  MatrixXd shifted = m;
  shifted.rowwise() += random_clip(rng, 1).row(0);
  EXPECT_NEAR(loss_temporal(shifted, m), 0.0, 1e-24);
}

TEST(Losses, TemporalMatchesExplicitDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int L = 3 + static_cast<int>(rng.below(20));
    const MatrixXd a = random_clip(rng, L), b = random_clip(rng, L);
    double vel = 0, acc = 0;
    for (int i = 0; i + 1 < L; ++i)
      for (int d = 0; d < 265; ++d) {
        const double da = a(i + 1, d) - a(i, d), db = b(i + 1, d) - b(i, d);
        vel += (da - db) * (da - db);
      }
    for (int i = 0; i + 2 < L; ++i)
      for (int d = 0; d < 265; ++d) {
        const double aa = a(i + 2, d) - 2 * a(i + 1, d) + a(i, d), ab = b(i + 2, d) - 2 * b(i + 1, d) + b(i, d);
        acc += (aa - ab) * (aa - ab);
      }
    const double expect = vel / ((L - 1) * 265.0) + acc / ((L - 2) * 265.0);
    EXPECT_NEAR(loss_temporal(a, b), expect, 1e-12);
  }
}

TEST(Losses, TemporalNeedsThreeFrames) {
  try {
    loss_temporal(MatrixXd::Zero(2, 265), MatrixXd::Zero(2, 265));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Length);
  }
}

TEST(Losses, InitialCases) {
  Rng rng(9);
  const VectorXd r = random_clip(rng, 265, 1).col(0);
  EXPECT_EQ(loss_initial(r, r), 0.0);
  VectorXd off = r;
  off(17) += 1.0;
  EXPECT_NEAR(loss_initial(off, r), 1.0 / 265, 1e-15);
  const VectorXd q = random_clip(rng, 265, 1).col(0);
  double s = 0;
  for (int i = 0; i < 265; ++i) s += (q(i) - r(i)) * (q(i) - r(i));
  EXPECT_NEAR(loss_initial(q, r), s / 265, 1e-12);
}

TEST(Losses, TotalIsUnweightedSum) {
  EXPECT_EQ(total_loss(LossTerms{}), 0.0);
  EXPECT_EQ(total_loss(LossTerms{0.25, 1.5, 2.0}), 3.75);
  Rng rng(10);
  const MatrixXd a = random_clip(rng, 6), b = random_clip(rng, 6);
  const VectorXd r = random_clip(rng, 265, 1).col(0);
  const GroupVector w(0.5, 1.2, 1.3);
  const auto terms = compute_losses(a, b, r, w);
  EXPECT_NEAR(terms.total(), loss_denoise(a, b, w) + loss_temporal(a, b) + loss_initial(a.row(0), r), 1e-12);
}

TEST(Losses, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = random_clip(rng, 5), b = random_clip(rng, 5);
    EXPECT_GT(loss_denoise(a, b, GroupVector::Ones()), 0.0);
    EXPECT_GT(loss_temporal(a, b), 0.0);
    EXPECT_GT(loss_initial(a.row(0), b.row(0)), 0.0);
  }
}

TEST(Losses, AnalyticGradientMatchesFiniteDifference) {
  Rng rng(12);
  const MatrixXd a = random_clip(rng, 5), b = random_clip(rng, 5);
  const VectorXd r = random_clip(rng, 265, 1).col(0);
  const GroupVector w(0.7, 1.4, 0.9);
  const MatrixXd g = loss_gradient<double>(a, b, r, w);
  for (int trial = 0; trial < 200; ++trial) {
    const auto i = static_cast<Eigen::Index>(rng.below(5)), j = static_cast<Eigen::Index>(rng.below(265));
    MatrixXd p = a, m = a;
    p(i, j) += 1e-5;
    m(i, j) -= 1e-5;
    const double fd = (compute_losses(p, b, r, w).total() - compute_losses(m, b, r, w).total()) / 2e-5;
    EXPECT_NEAR(g(i, j), fd, 1e-8);
  }
}

// --- adaptive weights ---------------------------------------------------------

TEST(AdaptiveWeights, EqualLossesGiveUnitWeights) {
  LossWeightsState s;
  s = update_adaptive_weights(GroupVector(0.4, 0.4, 0.4), s);
  EXPECT_NEAR((s.weights - GroupVector::Ones()).norm(), 0.0, 1e-15);
}

TEST(AdaptiveWeights, VanishingGroupHitsFloor) {
  LossWeightsState s;
  for (int i = 0; i < 200; ++i) s = update_adaptive_weights(GroupVector(1.0, 0.0, 2.0), s);
  EXPECT_DOUBLE_EQ(s.weights(1), kMinGroupWeight);
  EXPECT_NEAR(s.weights.sum(), 3.0, 1e-12);
}

TEST(AdaptiveWeights, TrajectoryMatchesScalarRecurrence) {
  const std::vector<std::array<double, 3>> losses = {
      {1.0, 2.0, 0.5}, {0.8, 1.9, 0.3}, {0.7, 1.7, 0.2}, {0.6, 1.2, 0.1}, {0.55, 1.0, 0.02}, {0.5, 0.9, 0.0},
      {0.5, 0.9, 0.0}, {0.5, 0.9, 0.0},  {0.5, 0.9, 0.0},  {0.5, 0.9, 0.0}};
  LossWeightsState s;
  s.update_rate = 0.25;
  double e0 = 0, e1 = 0, e2 = 0;
  for (const auto& l : losses) {
    s = update_adaptive_weights(GroupVector(l[0], l[1], l[2]), s);
    e0 = 0.75 * e0 + 0.25 * l[0];
    e1 = 0.75 * e1 + 0.25 * l[1];
    e2 = 0.75 * e2 + 0.25 * l[2];
    double w0 = 3 * e0 / (e0 + e1 + e2), w1 = 3 * e1 / (e0 + e1 + e2), w2 = 3 * e2 / (e0 + e1 + e2);
    if (w2 < 0.1) {  // only the translation group ever falls under the floor here
      w2 = 0.1;
      w0 = 2.9 * e0 / (e0 + e1);
      w1 = 2.9 * e1 / (e0 + e1);
    }
    EXPECT_NEAR(s.ema_losses(0), e0, 1e-14);
    EXPECT_NEAR(s.ema_losses(2), e2, 1e-14);
    EXPECT_NEAR(s.weights(0), w0, 1e-12);
    EXPECT_NEAR(s.weights(1), w1, 1e-12);
    EXPECT_NEAR(s.weights(2), w2, 1e-12);
  }
  EXPECT_DOUBLE_EQ(s.weights(2), kMinGroupWeight);
}

TEST(AdaptiveWeights, AlwaysBoundedAndNormalized) {
  Rng rng(13);
  LossWeightsState s;
  for (int i = 0; i < 2000; ++i) {
    GroupVector l;
    for (int g = 0; g < 3; ++g) l(g) = rng.bernoulli(0.2) ? 0.0 : std::pow(10.0, rng.uniform(-6, 3));
    s.update_rate = rng.uniform(0.01, 1.0);
    s = update_adaptive_weights(l, s);
    EXPECT_NEAR(s.weights.sum(), 3.0, 1e-12);
    EXPECT_GE(s.weights.minCoeff(), kMinGroupWeight - 1e-15);
    EXPECT_LE(s.weights.maxCoeff(), kMaxGroupWeight);
    EXPECT_GE(s.ema_losses.minCoeff(), 0.0);
  }
}

TEST(AdaptiveWeights, RejectsNegativeLoss) {
  EXPECT_THROW(update_adaptive_weights(GroupVector(1, -1, 1), LossWeightsState{}), Error);
}

// --- normalizer ----------------------------------------------------------------

TEST(Normalizer, RoundTripAndGroupScale) {
  Rng rng(14);
  MatrixXd frames = random_clip(rng, 300);
  frames.col(5) *= 3.0;
  frames.col(262).array() += 4.0;
  const auto n = Normalizer::fit(frames);
  const MatrixXd z = n.normalize(frames);
  EXPECT_LE((n.denormalize(z) - frames).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(z.col(262).mean(), 0.0, 1e-12);
  for (int g = 0; g < kNumGroups; ++g) {
    const MatrixXd block = z.middleCols(kGroupBounds[g], group_size(g));
    EXPECT_NEAR(block.squaredNorm() / static_cast<double>(block.size()), 1.0, 1e-9);
    EXPECT_EQ(n.scale(kGroupBounds[g]), n.scale(kGroupBounds[g + 1] - 1));
  }
}

// --- sampler ---------------------------------------------------------------------

TEST(Sampler, LadderShape) {
  const auto s = NoiseSchedule::linear();
  const auto l10 = timestep_ladder(s, 10);
  ASSERT_EQ(l10.size(), 10u);
  EXPECT_EQ(l10.front(), 1000);
  EXPECT_EQ(l10.back(), 100);
  EXPECT_EQ(timestep_ladder(s, 1), std::vector<int>{1000});
  EXPECT_EQ(timestep_ladder(s, 1000).back(), 1);
}

TEST(Sampler, StepsOutOfRangeOrNotDividing) {
  const auto s = NoiseSchedule::linear();
  for (int steps : {0, -1, 1001, 7, 300}) {
    try {
      timestep_ladder(s, steps);
      FAIL() << steps;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Range);
    }
  }
}

TEST(Sampler, ConstantOracleIsRecovered) {
  const auto s = NoiseSchedule::linear();
  Rng rng(15);
  const MatrixXd target = random_clip(rng, 80);
  const DenoiseFn oracle = [&](const MatrixXd&, int) { return target; };
  for (int steps : {1, 5, 10, 50, 1000}) {
    const MatrixXd out = sample(oracle, s, 80, 265, steps, 99);
    EXPECT_LE((out - target).cwiseAbs().maxCoeff(), 1e-5) << "steps=" << steps;
  }
}

TEST(Sampler, DeterministicPerSeed) {
  const auto s = NoiseSchedule::linear();
  // A denoiser whose output depends on its input exercises the recurrence.
  const DenoiseFn shrink = [&](const MatrixXd& x, int t) { return MatrixXd(std::sqrt(s.alpha_bar(t)) * 0.5 * x); };
  const MatrixXd a = sample(shrink, s, 6, 265, 1000, 5);
  const MatrixXd b = sample(shrink, s, 6, 265, 1000, 5);
  const MatrixXd c = sample(shrink, s, 6, 265, 1000, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

// --- denoiser ----------------------------------------------------------------------

struct TinyInputs {
  MatrixXd x_t, x0, ecs;
  VectorXd m_ref;
  int t = 0;
};

TinyInputs tiny_inputs(Rng& rng, int L, const DenoiserConfig& cfg) {
  TinyInputs in;
  in.x_t = random_clip(rng, L);
  in.x0 = random_clip(rng, L);
  in.ecs = random_clip(rng, L, cfg.ecs_width());
  in.m_ref = random_clip(rng, 265, 1).col(0);
  in.t = 1 + static_cast<int>(rng.below(1000));
  return in;
}

TEST(Denoiser, ZeroHeadOutputsZero) {
  DenoiserConfig cfg;
  Denoiser<double> net(cfg);
  net.init(1);
  Rng rng(16);
  const auto in = tiny_inputs(rng, 12, cfg);
  const MatrixXd y = net.forward(in.x_t, in.m_ref, in.ecs, in.t);
  EXPECT_EQ(y.rows(), 12);
  EXPECT_EQ(y.cols(), 265);
  EXPECT_TRUE(y.isZero(0.0));
}

TEST(Denoiser, DeterministicForward) {
  DenoiserConfig cfg;
  Denoiser<float> net(cfg);
  net.init_dense(2);
  Rng rng(17);
  const auto in = tiny_inputs(rng, 20, cfg);
  const Eigen::MatrixXf a = net.forward(in.x_t.cast<float>(), in.m_ref.cast<float>(), in.ecs.cast<float>(), in.t);
  const Eigen::MatrixXf b = net.forward(in.x_t.cast<float>(), in.m_ref.cast<float>(), in.ecs.cast<float>(), in.t);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.allFinite());
}

TEST(Denoiser, ParameterCountNearBudget) {
  Denoiser<float> net(DenoiserConfig{});
  EXPECT_GT(net.param_count(), 50000);
  EXPECT_LT(net.param_count(), 150000);
}

TEST(Denoiser, ShapeErrors) {
  DenoiserConfig cfg;
  Denoiser<double> net(cfg);
  net.init(3);
  Rng rng(18);
  const auto in = tiny_inputs(rng, 5, cfg);
  EXPECT_THROW(net.forward(MatrixXd::Zero(5, 264), in.m_ref, in.ecs, 10), Error);
  EXPECT_THROW(net.forward(in.x_t, in.m_ref, MatrixXd::Zero(4, cfg.ecs_width()), 10), Error);
  EXPECT_THROW(net.forward(in.x_t, VectorXd::Zero(10), in.ecs, 10), Error);
}

TEST(Denoiser, DisabledConditionsAreIgnored) {
  DenoiserConfig cfg;
  cfg.use_emotion = false;
  cfg.use_ckp = false;
  Denoiser<double> net(cfg);
  net.init_dense(4);
  Rng rng(19);
  auto in = tiny_inputs(rng, 6, cfg);
  const MatrixXd a = net.forward(in.x_t, in.m_ref, in.ecs, in.t);
  in.ecs.rightCols(63 + 8).setRandom();
  const MatrixXd b = net.forward(in.x_t, in.m_ref, in.ecs, in.t);
  EXPECT_EQ(a, b);
}

TEST(Denoiser, OutputDependsOnTimestepAndReference) {
  DenoiserConfig cfg;
  Denoiser<double> net(cfg);
  net.init_dense(5);
  Rng rng(20);
  const auto in = tiny_inputs(rng, 6, cfg);
  const MatrixXd a = net.forward(in.x_t, in.m_ref, in.ecs, 10);
  EXPECT_NE(a, net.forward(in.x_t, in.m_ref, in.ecs, 900));
  EXPECT_NE(a, net.forward(in.x_t, VectorXd(in.m_ref * 2.0), in.ecs, 10));
}

/// Max relative error between the analytic gradient of the total loss and
/// central differences, over every parameter.
double gradient_check_max_rel_error(std::uint64_t seed) {
  DenoiserConfig cfg;
  cfg.hidden = 16;
  cfg.blocks = 2;
  cfg.feature_width = 4;
  Denoiser<double> net(cfg);
  net.init_dense(seed, 0.3);
  Rng rng(derive_seed(seed, 7));
  const auto in = tiny_inputs(rng, 4, cfg);
  const GroupVector w(0.8, 1.5, 0.7);
  const auto loss = [&] {
    return compute_losses(net.forward(in.x_t, in.m_ref, in.ecs, in.t), in.x0, in.m_ref, w).total();
  };
  Denoiser<double>::Cache cache;
  const MatrixXd y = net.forward(in.x_t, in.m_ref, in.ecs, in.t, &cache);
  VectorXd grad = VectorXd::Zero(net.param_count());
  net.backward(cache, loss_gradient<double>(y, in.x0, in.m_ref, w), grad);

  const double h = 1e-4;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < net.param_count(); ++i) {
    const double keep = net.params()(i);
    net.params()(i) = keep + h;
    const double up = loss();
    net.params()(i) = keep - h;
    const double down = loss();
    net.params()(i) = keep;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - grad(i)) / std::max({std::abs(fd), std::abs(grad(i)), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const double err = gradient_check_max_rel_error(seed);
    RecordProperty("max_rel_error_seed_" + std::to_string(seed), std::to_string(err));
    std::printf("gradient check seed %llu: max relative error %.3e\n", static_cast<unsigned long long>(seed), err);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

}  // namespace
}  // namespace streamhead::diffusion
