#pragma once

// Single-threaded, seed-deterministic training of the denoiser on the
// synthetic corpus: x0-regression at uniformly drawn timesteps, mirrored
// clips with probability 0.5, adaptive group weights refreshed every epoch
// and a fixed-timestep held-out grouped MSE.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/conditioning/synth.hpp"
#include "streamhead/diffusion/losses.hpp"
#include "streamhead/diffusion/model.hpp"
#include "streamhead/diffusion/sampler.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/rng.hpp"

namespace streamhead::diffusion {

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 100;
  int batch_size = 8;
  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 0.002;
  bool cosine_decay = true;  // anneal the rate to zero over the run
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  bool flip_augmentation = true;
  double flip_probability = 0.5;
  bool adaptive_weights = true;
  double weight_update_rate = 0.3;
  int validation_timesteps = 8;
  DenoiserConfig arch;

  void validate() const {
    arch.validate();
    require(epochs >= 0, ErrorKind::Config, "epochs must be >= 0");
    require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
    require(learning_rate > 0.0, ErrorKind::Config, "learning_rate must be positive");
    require(grad_clip >= 0.0, ErrorKind::Config, "grad_clip must be >= 0");
    require(flip_probability >= 0.0 && flip_probability <= 1.0, ErrorKind::Config, "flip_probability must be in [0, 1]");
    require(weight_update_rate > 0.0 && weight_update_rate <= 1.0, ErrorKind::Config,
            "weight_update_rate must be in (0, 1]");
    require(validation_timesteps >= 1, ErrorKind::Config, "validation_timesteps must be >= 1");
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  GroupVector train_group_mse = GroupVector::Zero();
  double val_grouped_mse = 0.0;
  GroupVector val_group_mse = GroupVector::Zero();
  GroupVector weights = GroupVector::Ones();
  double seconds = 0.0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  const auto v = [](const GroupVector& g) { return std::vector<double>{g(0), g(1), g(2)}; };
  return {{"epoch", m.epoch},       {"train_loss", m.train_loss},         {"train_group_mse", v(m.train_group_mse)},
          {"val_grouped_mse", m.val_grouped_mse}, {"val_group_mse", v(m.val_group_mse)}, {"weights", v(m.weights)},
          {"seconds", m.seconds}};
}

/// One clip in the form the network consumes (normalized, float).
struct PreparedClip {
  Eigen::MatrixXf x0;
  Eigen::MatrixXf ecs;
  Eigen::VectorXf m_ref;
};

inline PreparedClip prepare_clip(const conditioning::SyntheticClip& clip, const Normalizer& norm) {
  PreparedClip p;
  p.x0 = norm.normalize(clip.target).cast<float>();
  p.ecs = conditioning::assemble_ecs(clip.bundle).cast<float>();
  p.m_ref = norm.normalize(clip.bundle.m_ref).cast<float>();
  return p;
}

inline conditioning::SyntheticClip mirrored(const conditioning::SyntheticClip& clip,
                                            const motion::SymmetryPairing& pairing) {
  conditioning::SyntheticClip out = clip;
  out.bundle = conditioning::flip_bundle(clip.bundle, pairing);
  for (Eigen::Index r = 0; r < clip.target.rows(); ++r)
    out.target.row(r) = motion::hflip_vector(motion::MotionVector::from(clip.target.row(r)), pairing).values.transpose();
  return out;
}

/// Fits the normalizer on training targets, stored at float precision so a
/// reloaded checkpoint reproduces the in-memory model exactly.
inline Normalizer fit_normalizer(const std::vector<conditioning::SyntheticClip>& clips, const std::vector<int>& indices) {
  require(!indices.empty(), ErrorKind::InvalidInput, "no training clips");
  Eigen::Index rows = 0;
  for (int i : indices) rows += clips[static_cast<std::size_t>(i)].target.rows();
  Eigen::MatrixXd stacked(rows, motion::kMotionDims);
  Eigen::Index r = 0;
  for (int i : indices) {
    const auto& t = clips[static_cast<std::size_t>(i)].target;
    stacked.middleRows(r, t.rows()) = t;
    r += t.rows();
  }
  Normalizer n = Normalizer::fit(stacked);
  n.mean = n.mean.cast<float>().cast<double>();
  n.scale = n.scale.cast<float>().cast<double>();
  return n;
}

struct ValidationReport {
  double grouped = 0.0;
  GroupVector groups = GroupVector::Zero();
};

/// Held-out grouped MSE of x0 predictions at fixed evenly spaced timesteps
/// with seeded noise; independent of training randomness.
inline ValidationReport validate_model(const MotionModel& model, const std::vector<PreparedClip>& clips, int timesteps,
                                       std::uint64_t seed) {
  ValidationReport rep;
  if (clips.empty()) return rep;
  const int T = model.schedule.T;
  for (std::size_t j = 0; j < clips.size(); ++j) {
    const auto& c = clips[j];
    for (int k = 0; k < timesteps; ++k) {
      const int t = std::clamp(static_cast<int>(std::lround((k + 0.5) * T / timesteps)), 1, T);
      const Eigen::MatrixXf eps =
          gaussian_matrix(c.x0.rows(), c.x0.cols(), derive_seed(seed, 0x7A11'0000ULL + j * 4096 + static_cast<std::size_t>(k)))
              .cast<float>();
      const Eigen::MatrixXf x_t = q_sample(c.x0, t, eps, model.schedule);
      rep.groups += group_mse(model.net.forward(x_t, c.m_ref, c.ecs, t), c.x0);
    }
  }
  rep.groups /= static_cast<double>(clips.size() * static_cast<std::size_t>(timesteps));
  rep.grouped = rep.groups.mean();
  return rep;
}

struct TrainResult {
  MotionModel model;
  std::vector<EpochMetrics> log;
  ValidationReport baseline;  // untrained (zero head) model
  ValidationReport final_validation;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

class Trainer {
 public:
  Trainer(TrainConfig cfg, const std::vector<conditioning::SyntheticClip>& clips, conditioning::DatasetSplit split)
      : cfg_((cfg.validate(), cfg)), clips_(clips), split_(std::move(split)) {
    require(!split_.train.empty(), ErrorKind::InvalidInput, "training split is empty");
    for (int i : split_.train) require(i >= 0 && i < static_cast<int>(clips.size()), ErrorKind::Range, "bad split index");
    for (int i : split_.validation) require(i >= 0 && i < static_cast<int>(clips.size()), ErrorKind::Range, "bad split index");
  }

  TrainResult run(const EpochCallback& on_epoch = {}) {
    TrainResult res{MotionModel(cfg_.arch), {}, {}, {}};
    MotionModel& model = res.model;
    model.seed = cfg_.seed;
    model.net.init(derive_seed(cfg_.seed, 0x1417));
    model.norm = fit_normalizer(clips_, split_.train);

    const auto pairing = motion::default_pairing();
    std::vector<PreparedClip> train, train_flipped, val;
    for (int i : split_.train) {
      const auto& c = clips_[static_cast<std::size_t>(i)];
      train.push_back(prepare_clip(c, model.norm));
      if (cfg_.flip_augmentation) train_flipped.push_back(prepare_clip(mirrored(c, pairing), model.norm));
    }
    for (int i : split_.validation) val.push_back(prepare_clip(clips_[static_cast<std::size_t>(i)], model.norm));

    const std::uint64_t val_seed = derive_seed(cfg_.seed, 0x7A11);
    res.baseline = validate_model(model, val, cfg_.validation_timesteps, val_seed);

    LossWeightsState weights;
    weights.update_rate = cfg_.weight_update_rate;
    const Eigen::Index P = model.net.param_count();
    Eigen::VectorXf grad(P), adam_m = Eigen::VectorXf::Zero(P), adam_v = Eigen::VectorXf::Zero(P);
    long adam_step = 0;
    Rng rng(derive_seed(cfg_.seed, 0x7EA1));
    Denoiser<float>::Cache cache;

    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

      EpochMetrics em;
      em.epoch = epoch;
      em.weights = weights.weights;
      double loss_sum = 0.0;
      std::size_t seen = 0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg_.batch_size));
        grad.setZero();
        for (std::size_t b = b0; b < b1; ++b) {
          const bool flip = cfg_.flip_augmentation && rng.bernoulli(cfg_.flip_probability);
          const PreparedClip& c = flip ? train_flipped[order[b]] : train[order[b]];
          const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(model.schedule.T)));
          Eigen::MatrixXf eps(c.x0.rows(), c.x0.cols());
          for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = static_cast<float>(rng.normal());
          const Eigen::MatrixXf x_t = q_sample(c.x0, t, eps, model.schedule);
          const Eigen::MatrixXf y = model.net.forward(x_t, c.m_ref, c.ecs, t, &cache);
          const LossTerms terms = compute_losses(y, c.x0, c.m_ref, weights.weights);
          if (!std::isfinite(terms.total()))
            fail(ErrorKind::NumericalFailure, "non-finite loss at epoch " + std::to_string(epoch) + ", clip " +
                                                  std::to_string(order[b]) + ", t=" + std::to_string(t) +
                                                  " (denoise=" + std::to_string(terms.denoise) +
                                                  ", temporal=" + std::to_string(terms.temporal) +
                                                  ", initial=" + std::to_string(terms.initial) + ")");
          loss_sum += terms.total();
          em.train_group_mse += group_mse(y, c.x0);
          ++seen;
          model.net.backward(cache, loss_gradient<float>(y, c.x0, c.m_ref, weights.weights), grad);
        }
        grad /= static_cast<float>(b1 - b0);
        if (cfg_.grad_clip > 0.0) {
          const double norm = grad.cast<double>().norm();
          if (norm > cfg_.grad_clip) grad *= static_cast<float>(cfg_.grad_clip / norm);
        }
        step(model.net.params(), grad, adam_m, adam_v, adam_step, rate(epoch, b0 / static_cast<std::size_t>(cfg_.batch_size), order.size()));
      }
      em.train_loss = loss_sum / static_cast<double>(seen);
      em.train_group_mse /= static_cast<double>(seen);
      if (cfg_.adaptive_weights) weights = update_adaptive_weights(em.train_group_mse, weights);
      model.epoch = epoch;
      model.group_weights = weights.weights;
      const auto rep = validate_model(model, val, cfg_.validation_timesteps, val_seed);
      em.val_grouped_mse = rep.grouped;
      em.val_group_mse = rep.groups;
      em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      res.log.push_back(em);
      if (on_epoch) on_epoch(em);
    }
    res.final_validation = validate_model(model, val, cfg_.validation_timesteps, val_seed);
    return res;
  }

  /// Network-ready held-out clips for a trained model.
  std::vector<PreparedClip> validation_clips(const Normalizer& norm) const {
    std::vector<PreparedClip> out;
    for (int i : split_.validation) out.push_back(prepare_clip(clips_[static_cast<std::size_t>(i)], norm));
    return out;
  }

 private:
  double rate(int epoch, std::size_t batch, std::size_t clips) const {
    if (!cfg_.cosine_decay) return cfg_.learning_rate;
    const double per_epoch = std::ceil(static_cast<double>(clips) / cfg_.batch_size);
    const double progress = ((epoch - 1) * per_epoch + static_cast<double>(batch)) / (cfg_.epochs * per_epoch);
    return cfg_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }

  void step(Eigen::VectorXf& params, const Eigen::VectorXf& grad, Eigen::VectorXf& m, Eigen::VectorXf& v, long& t,
            double rate) const {
    const float lr = static_cast<float>(rate);
    if (cfg_.optimizer == Optimizer::Sgd) {
      params -= lr * grad;
      return;
    }
    constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    ++t;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    const float c1 = 1 - std::pow(b1, static_cast<float>(t)), c2 = 1 - std::pow(b2, static_cast<float>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  TrainConfig cfg_;
  const std::vector<conditioning::SyntheticClip>& clips_;
  conditioning::DatasetSplit split_;
};

}  // namespace streamhead::diffusion
