#pragma once

// A trained generator: denoiser weights, the motion normalizer and the noise
// schedule, plus the conditioning glue to turn a ConditionBundle into clips.

#include <cstdint>

#include <Eigen/Dense>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/diffusion/denoiser.hpp"
#include "streamhead/diffusion/losses.hpp"
#include "streamhead/diffusion/normalizer.hpp"
#include "streamhead/diffusion/sampler.hpp"
#include "streamhead/diffusion/schedule.hpp"

namespace streamhead::diffusion {

struct MotionModel {
  Denoiser<float> net{DenoiserConfig{}};
  Normalizer norm;
  NoiseSchedule schedule = NoiseSchedule::linear();
  std::uint64_t seed = 0;
  int epoch = 0;
  GroupVector group_weights = GroupVector::Ones();

  explicit MotionModel(DenoiserConfig cfg = {}) : net(cfg) {}

  const DenoiserConfig& config() const { return net.config(); }

  /// Sample one clip in normalized space. `ecs` is the raw assembled ECS.
  Eigen::MatrixXd generate_normalized(const Eigen::MatrixXd& ecs, const motion::MotionVector& m_ref, int steps,
                                      std::uint64_t noise_seed) const {
    const Eigen::MatrixXf ecs_f = ecs.cast<float>();
    const Eigen::VectorXf ref_f = norm.normalize(m_ref).cast<float>();
    const DenoiseFn fn = [&](const Eigen::MatrixXd& x, int t) {
      return Eigen::MatrixXd(net.forward(x.cast<float>(), ref_f, ecs_f, t).cast<double>());
    };
    return sample(fn, schedule, ecs.rows(), motion::kMotionDims, steps, noise_seed);
  }

  /// Sample one clip (L x 265, motion space) for the bundle's L frames.
  Eigen::MatrixXd generate(const conditioning::ConditionBundle& bundle, int steps, std::uint64_t noise_seed) const {
    bundle.validate();
    require(bundle.audio.width() == config().feature_width, ErrorKind::Shape,
            "audio feature width " + std::to_string(bundle.audio.width()) + " does not match the model's " +
                std::to_string(config().feature_width));
    return norm.denormalize(generate_normalized(conditioning::assemble_ecs(bundle), bundle.m_ref, steps, noise_seed));
  }
};

}  // namespace streamhead::diffusion
