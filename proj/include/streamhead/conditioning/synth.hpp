#pragma once

// Deterministic synthetic audio-to-motion corpus. Each clip is a short
// utterance: a syllabic envelope drives a voiced-noise waveform (features
// come from the streaming extractor), the lip block follows a linear map of
// the envelope, eye blinks and gaze drive the lid keypoints, the emotion
// label adds a class prototype to the deformation and head pose drifts
// slowly with a weak coupling to speech energy.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/rng.hpp"
#include "streamhead/streaming/features.hpp"

namespace streamhead::conditioning {

struct SynthConfig {
  int warmup_frames = 10;  // audio context before the reference frame
  int identities = 24;
  double delta_noise = 0.002;
  int emotion_ramp_frames = 6;
  std::array<double, 3> pose_sway_deg = {1.2, 0.8, 0.6};  // yaw, pitch, roll drift amplitude
  double nod_gain_deg = 3.0;                              // pitch response to speech energy
  streaming::ExtractorConfig extractor;
  unsigned threads = 0;  // 0 = hardware concurrency
};

/// Per-clip knobs used by tests and demos.
struct ClipOverrides {
  bool silent = false;
  std::optional<int> emotion;
};

struct SyntheticClip {
  ConditionBundle bundle;
  Matrix target;  // L x 265
  std::uint64_t seed = 0;
  int identity = 0;
  std::vector<double> envelope;  // per target frame
};

inline int delta_dim(int keypoint, int axis) { return 3 * keypoint + axis; }

/// Keypoints whose deformation is driven by speech.
inline constexpr std::array<int, 4> kLipKeypoints = {motion::kMouthCornerLeft, motion::kMouthCornerRight,
                                                     motion::kUpperLip, motion::kLowerLip};

/// Lip and jaw displacement per unit envelope for a mouth of template width.
inline Eigen::Matrix<double, motion::kDeltaDims, 1> lip_map() {
  Eigen::Matrix<double, motion::kDeltaDims, 1> m = Eigen::Matrix<double, motion::kDeltaDims, 1>::Zero();
  m(delta_dim(motion::kMouthCornerLeft, 0)) = -0.012;
  m(delta_dim(motion::kMouthCornerLeft, 1)) = 0.010;
  m(delta_dim(motion::kMouthCornerRight, 0)) = 0.012;
  m(delta_dim(motion::kMouthCornerRight, 1)) = 0.010;
  m(delta_dim(motion::kUpperLip, 1)) = -0.015;
  m(delta_dim(motion::kUpperLip, 2)) = 0.004;
  m(delta_dim(motion::kLowerLip, 1)) = 0.100;  // dim 58, mouth open
  m(delta_dim(motion::kLowerLip, 2)) = -0.010;
  m(delta_dim(motion::kChin, 1)) = 0.070;
  return m;
}

/// Fixed, mirror-symmetric deformation offset per emotion class. Class 0
/// (neutral) is zero; lips, chin and lids are never touched.
inline Eigen::Matrix<double, motion::kDeltaDims, 1> emotion_prototype(int index) {
  EmotionLabel{index}.validate();
  Eigen::Matrix<double, motion::kDeltaDims, 1> p = Eigen::Matrix<double, motion::kDeltaDims, 1>::Zero();
  if (index == 0) return p;
  Rng rng(derive_seed(0xE30710'0000ULL, static_cast<std::uint64_t>(index)));
  using namespace motion;
  const std::array<std::pair<int, int>, 4> pairs = {
      {{kBrowLeft, kBrowRight}, {kCheekLeft, kCheekRight}, {kEyeOuterLeft, kEyeOuterRight}, {kJawLeft, kJawRight}}};
  for (auto [l, r] : pairs) {
    for (int a = 0; a < 3; ++a) {
      const double v = 0.025 * rng.normal();
      p(delta_dim(l, a)) = v;
      p(delta_dim(r, a)) = a == 0 ? -v : v;
    }
  }
  for (int k : {kNoseTip, kNoseBridge, kPhiltrum, kForehead}) {
    p(delta_dim(k, 1)) = 0.025 * rng.normal();
    p(delta_dim(k, 2)) = 0.025 * rng.normal();
  }
  return p;
}

struct IdentityProfile {
  motion::CanonicalKeypoints c_ref;
  double mouth_scale = 1.0;
  double eye_open = 0.3;
};

inline IdentityProfile identity_profile(std::uint64_t dataset_seed, int identity) {
  Rng rng(derive_seed(dataset_seed, (1ULL << 40) + static_cast<std::uint64_t>(identity)));
  IdentityProfile p;
  p.c_ref = motion::template_keypoints();
  for (int i = 0; i < motion::kNumKeypoints; ++i)
    for (int a = 0; a < 3; ++a) p.c_ref.points(i, a) += 0.012 * rng.normal();
  const auto& c = p.c_ref.points;
  const auto& t = motion::template_keypoints().points;
  p.mouth_scale = (c(motion::kMouthCornerLeft, 0) - c(motion::kMouthCornerRight, 0)) /
                  (t(motion::kMouthCornerLeft, 0) - t(motion::kMouthCornerRight, 0));
  p.eye_open = rng.uniform(0.26, 0.34);
  return p;
}

namespace detail {

/// Syllable-like envelope in [0, 1] with pauses.
inline std::vector<double> syllabic_envelope(Rng& rng, int frames) {
  std::vector<double> env(static_cast<std::size_t>(frames), 0.0);
  int f = 0;
  while (f < frames) {
    if (rng.bernoulli(0.15)) {
      f += 5 + static_cast<int>(rng.below(11));
      continue;
    }
    const int dur = 3 + static_cast<int>(rng.below(4));
    const double amp = rng.uniform(0.4, 1.0);
    for (int k = 0; k < dur && f + k < frames; ++k) {
      auto& e = env[static_cast<std::size_t>(f + k)];
      e = std::max(e, amp * std::sin(std::numbers::pi * (k + 0.5) / dur));
    }
    f += dur + static_cast<int>(rng.below(2));
  }
  return env;
}

/// Voiced noise shaped by a per-frame envelope (linear between frame centres).
inline std::vector<double> envelope_to_pcm(Rng& rng, const std::vector<double>& env, int hop, int sample_rate) {
  const std::size_t n = env.size() * static_cast<std::size_t>(hop);
  std::vector<double> pcm(n);
  const double f0 = rng.uniform(100.0, 220.0);
  const std::array<double, 3> formants = {rng.uniform(500, 800), rng.uniform(1100, 1700), rng.uniform(2300, 2900)};
  std::array<double, 3> y1{}, y2{};
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) / hop - 0.5;
    const auto f = static_cast<std::ptrdiff_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(f);
    const auto at = [&](std::ptrdiff_t k) {
      return env[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(env.size()) - 1))];
    };
    const double a = (1.0 - frac) * at(f) + frac * at(f + 1);
    phase += f0 / sample_rate;
    if (phase >= 1.0) phase -= 1.0;
    const double excitation = (phase < 0.05 ? 1.0 : 0.0) + 0.3 * rng.normal();
    double out = 0.0;
    for (std::size_t k = 0; k < formants.size(); ++k) {
      const double r = 0.97, w = 2.0 * std::numbers::pi * formants[k] / sample_rate;
      const double y = 2.0 * r * std::cos(w) * y1[k] - r * r * y2[k] + (1.0 - r) * excitation;
      y2[k] = y1[k];
      y1[k] = y;
      out += y;
    }
    pcm[i] = a == 0.0 ? 0.0 : 0.3 * a * out;
  }
  return pcm;
}

}  // namespace detail

/// Clip `index` of the dataset with master seed `seed`.
inline SyntheticClip synth_clip(std::uint64_t seed, int index, int L, const SynthConfig& cfg = {},
                                const ClipOverrides& overrides = {}) {
  require(L >= 2, ErrorKind::InvalidInput, "clip length must be at least 2");
  const std::uint64_t clip_seed = derive_seed(seed, static_cast<std::uint64_t>(index));
  Rng rng(clip_seed);
  const int w0 = cfg.warmup_frames;
  const int total = w0 + 1 + L;
  const double fps = cfg.extractor.fps;

  SyntheticClip clip;
  clip.seed = clip_seed;
  clip.identity = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.identities)));
  const IdentityProfile who = identity_profile(seed, clip.identity);
  const int emotion = overrides.emotion.value_or(static_cast<int>(rng.below(kNumEmotions)));
  const int previous_emotion = static_cast<int>(rng.below(kNumEmotions));

  std::vector<double> env = detail::syllabic_envelope(rng, total);
  if (overrides.silent) std::fill(env.begin(), env.end(), 0.0);
  Rng audio_rng(derive_seed(clip_seed, 1));
  const auto pcm = detail::envelope_to_pcm(audio_rng, env, cfg.extractor.hop(), cfg.extractor.sample_rate);
  const Matrix features = streaming::extract_features_full(pcm, cfg.extractor);

  // Slow pose drift; pitch nods with smoothed speech energy.
  const double yaw0 = rng.uniform(-15, 15), pitch0 = rng.uniform(-8, 8), roll0 = rng.uniform(-5, 5);
  std::array<double, 3> freq{}, phase{};
  for (int k = 0; k < 3; ++k) {
    freq[static_cast<std::size_t>(k)] = rng.uniform(0.1, 0.4);
    phase[static_cast<std::size_t>(k)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const Eigen::Vector3d t0(rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.02, 0.02));
  const double scale = rng.uniform(0.97, 1.03);

  const auto lips = lip_map();
  const auto proto_now = emotion_prototype(emotion);
  const auto proto_before = emotion_prototype(previous_emotion);

  Rng eye_rng(derive_seed(clip_seed, 2));
  int next_blink = static_cast<int>(eye_rng.below(60));
  int blink_phase = -1;
  constexpr std::array<double, 5> kBlink = {0.6, 0.15, 0.05, 0.3, 0.75};
  Eigen::Vector2d gaze = Eigen::Vector2d::Zero();

  std::vector<motion::MotionVector> frames;
  std::vector<EyeState> eyes;
  double env_smooth = 0.0;
  Rng noise_rng(derive_seed(clip_seed, 3));
  for (int f = 0; f < total; ++f) {
    const double e = env[static_cast<std::size_t>(f)];
    env_smooth = 0.8 * env_smooth + 0.2 * e;
    const double time = f / fps;

    double open_factor = 1.0;
    if (blink_phase < 0 && f >= next_blink) blink_phase = 0;
    if (blink_phase >= 0) {
      open_factor = kBlink[static_cast<std::size_t>(blink_phase)];
      if (++blink_phase == static_cast<int>(kBlink.size())) {
        blink_phase = -1;
        next_blink = f + 40 + static_cast<int>(eye_rng.below(70));
      }
    }
    gaze += -0.1 * gaze + Eigen::Vector2d(0.06 * eye_rng.normal(), 0.03 * eye_rng.normal());
    gaze = gaze.cwiseMax(-0.7).cwiseMin(0.7);
    const double a_l = who.eye_open * open_factor * (1.0 + 0.02 * eye_rng.normal());
    const double a_r = who.eye_open * open_factor * (1.0 + 0.02 * eye_rng.normal());
    const Eigen::Vector2d pupil_r = gaze;
    const Eigen::Vector2d pupil_l = gaze + Eigen::Vector2d(0.01 * eye_rng.normal(), 0.0);
    const EyeState eye = compute_eye_state(synth_eye_landmarks({0.18, -0.17}, 0.12, a_l, pupil_l),
                                           synth_eye_landmarks({-0.18, -0.17}, 0.12, a_r, pupil_r));

    motion::MotionFrame m;
    Eigen::Map<Eigen::Matrix<double, motion::kDeltaDims, 1>> delta(m.delta.data());
    const int k = f - w0 - 1;  // index inside the target window; < 0 before it
    const double ramp =
        k < 0 ? 0.0 : std::min(1.0, static_cast<double>(k + 1) / std::max(1, cfg.emotion_ramp_frames));
    delta = (1.0 - ramp) * proto_before + ramp * proto_now;
    delta += who.mouth_scale * e * lips;
    using namespace motion;
    delta(delta_dim(kUpperLidLeft, 1)) += 0.3 * (who.eye_open - eye.aspect_left) + 0.01 * eye.pupil_left.y();
    delta(delta_dim(kUpperLidRight, 1)) += 0.3 * (who.eye_open - eye.aspect_right) + 0.01 * eye.pupil_right.y();
    delta(delta_dim(kLowerLidLeft, 1)) += -0.05 * (who.eye_open - eye.aspect_left);
    delta(delta_dim(kLowerLidRight, 1)) += -0.05 * (who.eye_open - eye.aspect_right);
    delta(delta_dim(kUpperLidLeft, 0)) += 0.02 * eye.pupil_left.x();
    delta(delta_dim(kUpperLidRight, 0)) += 0.02 * eye.pupil_right.x();
    for (int d = 0; d < kDeltaDims; ++d) delta(d) += cfg.delta_noise * noise_rng.normal();

    const auto sway = [&](int i, double amp) {
      return amp * std::sin(2.0 * std::numbers::pi * freq[static_cast<std::size_t>(i)] * time +
                            phase[static_cast<std::size_t>(i)]);
    };
    m.euler.yaw = yaw0 + sway(0, cfg.pose_sway_deg[0]);
    m.euler.pitch = pitch0 + sway(1, cfg.pose_sway_deg[1]) + cfg.nod_gain_deg * (env_smooth - 0.35);
    m.euler.roll = roll0 + sway(2, cfg.pose_sway_deg[2]);
    m.translation = t0 + Eigen::Vector3d(0.003 * std::sin(0.9 * time + phase[0]), 0.003 * std::sin(0.7 * time + phase[1]), 0.0);
    m.scale = scale;

    frames.push_back(pack_motion(m));
    eyes.push_back(eye);
  }

  clip.bundle.audio.features = features.middleRows(w0 + 1, L);
  clip.bundle.audio.start_frame = 0;
  clip.bundle.eyes.assign(eyes.begin() + w0 + 1, eyes.end());
  clip.bundle.c_ref = who.c_ref;
  clip.bundle.emotion = EmotionLabel{emotion};
  clip.bundle.m_ref = frames[static_cast<std::size_t>(w0)];
  clip.target = Matrix(L, motion::kMotionDims);
  for (int i = 0; i < L; ++i) clip.target.row(i) = frames[static_cast<std::size_t>(w0 + 1 + i)].values.transpose();
  clip.envelope.assign(env.begin() + w0 + 1, env.end());
  return clip;
}

/// Clips are generated independently from per-clip seeds, so the result does
/// not depend on thread count or scheduling.
inline std::vector<SyntheticClip> synth_dataset(std::uint64_t seed, int n_clips, int L, const SynthConfig& cfg = {}) {
  require(n_clips >= 1, ErrorKind::InvalidInput, "n_clips must be at least 1");
  std::vector<SyntheticClip> clips(static_cast<std::size_t>(n_clips));
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n_clips));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n_clips; i = next++) clips[static_cast<std::size_t>(i)] = synth_clip(seed, i, L, cfg);
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return clips;
}

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> validation;
};

/// Seeded shuffle, then the last `validation_fraction` of clips (at least one)
/// are held out.
inline DatasetSplit split_dataset(std::uint64_t seed, int n_clips, double validation_fraction = 0.2) {
  require(n_clips >= 2, ErrorKind::InvalidInput, "need at least two clips to split");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorKind::Config,
          "validation fraction must be in (0, 1)");
  std::vector<int> order(static_cast<std::size_t>(n_clips));
  for (int i = 0; i < n_clips; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5B117));
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const int n_val = std::clamp(static_cast<int>(std::lround(validation_fraction * n_clips)), 1, n_clips - 1);
  DatasetSplit s;
  s.train.assign(order.begin(), order.end() - n_val);
  s.validation.assign(order.end() - n_val, order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

}  // namespace streamhead::conditioning
