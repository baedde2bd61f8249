#pragma once

// One streaming session: owns a pipeline instance, turns incoming protocol
// messages into audio and control updates, and reports frames and stats
// through a send callback. Transport independent.

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/diffusion/model.hpp"
#include "streamhead/rng.hpp"
#include "streamhead/service/protocol.hpp"
#include "streamhead/streaming/pipeline.hpp"

namespace streamhead::service {

/// Conditions and controls in force for a session. Updates queue up and are
/// applied when a segment boundary at or past their effective frame is
/// reached, so a segment never mixes two states.
struct ControlSnapshot {
  int emotion = 0;
  conditioning::EyeState eye;
  motion::ControlSpec control;
};

class ControlState {
 public:
  using Snapshot = ControlSnapshot;

  ControlState() = default;
  explicit ControlState(Snapshot initial) : current_(std::move(initial)) {}

  void submit(const ControlUpdate& u) {
    if (u.emotion) conditioning::EmotionLabel{*u.emotion}.validate();
    if (u.eye) u.eye->validate();
    if (u.control) u.control->validate();
    std::lock_guard lock(mu_);
    pending_.push_back(u);
  }

  /// State for frames emitted from `boundary` on. Boundaries must not
  /// decrease; repeated calls with the same boundary agree.
  Snapshot at(std::int64_t boundary) {
    std::lock_guard lock(mu_);
    require(boundary >= last_boundary_, ErrorKind::State, "segment boundaries went backwards");
    if (resolved_ && boundary == last_boundary_) return current_;
    last_boundary_ = boundary;
    resolved_ = true;
    std::vector<ControlUpdate> keep;
    for (auto& u : pending_) {
      if (u.effective_frame && *u.effective_frame > boundary) {
        keep.push_back(std::move(u));
        continue;
      }
      if (u.emotion) current_.emotion = *u.emotion;
      if (u.eye) current_.eye = *u.eye;
      if (u.control) current_.control = *u.control;
    }
    pending_ = std::move(keep);
    return current_;
  }

 private:
  std::mutex mu_;
  Snapshot current_;
  std::vector<ControlUpdate> pending_;
  std::int64_t last_boundary_ = 0;
  bool resolved_ = false;
};

/// Generator hooks backed by a trained model. The noise seed of each window
/// is derived from the session seed and the window's boundary frame.
inline streaming::GeneratorHooks model_hooks(std::shared_ptr<const diffusion::MotionModel> model, const SessionSettings& s,
                                             std::shared_ptr<ControlState> controls) {
  streaming::GeneratorHooks h;
  if (s.c_ref) {
    require(s.c_ref->size() == static_cast<std::size_t>(motion::kDeltaDims), ErrorKind::Config, "c_ref needs 63 values");
    std::copy(s.c_ref->begin(), s.c_ref->end(), h.c_ref.points.data());
  }
  motion::MotionVector m_ref = motion::neutral_motion();
  if (s.m_ref) m_ref = motion::MotionVector::from(*s.m_ref);
  h.idle_frame = m_ref;
  const motion::CanonicalKeypoints c_ref = h.c_ref;
  const int steps = s.steps;
  const std::uint64_t seed = s.seed;
  const bool use_ckp = s.use_ckp, use_emotion = s.use_emotion;
  if (model) {
    h.generate = [=](const streaming::Window& w, Eigen::Index boundary, const Eigen::MatrixXd& feats) {
      const auto snap = controls->at(boundary);
      conditioning::AudioFeatureChunk audio{feats, w.start};
      std::vector<conditioning::EyeState> eyes(static_cast<std::size_t>(w.length), snap.eye);
      Eigen::MatrixXd ecs = conditioning::assemble_ecs(audio, eyes, c_ref, {snap.emotion}, w.length);
      const int f = static_cast<int>(feats.cols());
      if (!use_ckp) ecs.middleCols(conditioning::ecs_ckp_offset(f), motion::kDeltaDims).setZero();
      if (!use_emotion) ecs.middleCols(conditioning::ecs_emotion_offset(f), conditioning::kNumEmotions).setZero();
      const Eigen::MatrixXd x = model->generate_normalized(ecs, m_ref, steps, derive_seed(seed, static_cast<std::uint64_t>(boundary)));
      return Eigen::MatrixXd(model->norm.denormalize(x));
    };
  }
  h.control = [controls](Eigen::Index boundary) { return controls->at(boundary).control; };
  return h;
}

/// Checks settings against the engine before any audio is accepted.
inline void validate_settings(const SessionSettings& s, const diffusion::MotionModel* model) {
  s.plan.validate();
  require(s.queue_capacity >= 1, ErrorKind::Config, "queue_capacity must be >= 1");
  conditioning::EmotionLabel{s.emotion}.validate();
  if (s.c_ref) require(s.c_ref->size() == static_cast<std::size_t>(motion::kDeltaDims), ErrorKind::Config, "c_ref needs 63 values");
  if (s.m_ref) {
    require(s.m_ref->size() == static_cast<std::size_t>(motion::kMotionDims), ErrorKind::Config, "m_ref needs 265 values");
    for (double v : *s.m_ref) require(std::isfinite(v), ErrorKind::Config, "m_ref must be finite");
  }
  if (!s.simulate_latency) {
    require(model != nullptr, ErrorKind::Config, "no checkpoint loaded; only simulated sessions are available");
    diffusion::timestep_ladder(model->schedule, s.steps);
    require(model->config().feature_width == streaming::ExtractorConfig{}.bands, ErrorKind::Config,
            "checkpoint feature width does not match the extractor");
  }
}

class Session {
 public:
  using Send = std::function<void(const Message&)>;

  /// `default_simulation` applies to sessions that do not ask for one.
  Session(std::shared_ptr<const diffusion::MotionModel> model, Send send,
          std::optional<streaming::LatencyProfile> default_simulation = std::nullopt)
      : model_(std::move(model)), send_(std::move(send)), default_simulation_(default_simulation) {}

  ~Session() {
    if (audio_) audio_->close();
    if (worker_.joinable()) worker_.join();
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Parses and handles one text message. Errors are reported to the peer
  /// and leave the session usable.
  void handle_text(std::string_view text) {
    try {
      handle(parse_message(text));
    } catch (const Error& e) {
      send_(error_message(e));
    }
  }

  void handle(const Message& msg) {
    try {
      std::visit([this](const auto& m) { on(m); }, msg);
    } catch (const Error& e) {
      send_(error_message(e));
    }
  }

  /// Blocks until the pipeline has drained (after session.end).
  void wait() {
    if (worker_.joinable()) worker_.join();
  }

  bool started() const { return started_; }
  bool finished() const { return finished_; }

 private:
  void on(const SessionStart& m) {
    require(!started_, ErrorKind::State, "session already started");
    SessionSettings settings = m.settings;
    if (!settings.simulate_latency) settings.simulate_latency = default_simulation_;
    validate_settings(settings, model_.get());
    settings_ = settings;
    session_id_ = m.session_id;
    controls_ = std::make_shared<ControlState>(ControlState::Snapshot{m.settings.emotion, {}, {}});
    audio_ = std::make_shared<streaming::BoundedQueue<std::vector<double>>>(static_cast<std::size_t>(m.settings.queue_capacity));
    started_ = true;
    worker_ = std::thread([this] { run(); });
  }

  void on(const AudioChunk& m) {
    require(started_, ErrorKind::State, "audio before session.start");
    require(!ended_, ErrorKind::State, "audio after session.end");
    require(m.sample_rate == streaming::ExtractorConfig{}.sample_rate, ErrorKind::Config,
            "expected 16000 Hz audio, got " + std::to_string(m.sample_rate));
    require(m.seq == next_seq_, ErrorKind::Protocol,
            "audio chunk seq " + std::to_string(m.seq) + ", expected " + std::to_string(next_seq_));
    ++next_seq_;
    if (m.pcm.empty()) return;
    audio_->push(streaming::pcm16_to_double(m.pcm));  // blocks while the pipeline is behind
  }

  void on(const ControlUpdate& m) {
    require(started_, ErrorKind::State, "control.update before session.start");
    controls_->submit(m);
  }

  void on(const SessionEnd&) {
    require(started_, ErrorKind::State, "session.end before session.start");
    require(!ended_, ErrorKind::State, "session already ended");
    ended_ = true;
    audio_->close();
  }

  template <typename T>
  void on(const T&) {
    fail(ErrorKind::Protocol, "message type not accepted from clients");
  }

  void run() {
    streaming::PipelineConfig cfg;
    cfg.plan = settings_.plan;
    cfg.queue_capacity = static_cast<std::size_t>(settings_.queue_capacity);
    cfg.simulate = settings_.simulate_latency;
    const int fps = cfg.extractor.fps;
    streaming::PipelineTimings timings(session_id_);
    auto audio = audio_;
    const streaming::AudioSource source = [audio] { return audio->pop(); };
    std::int64_t frames = 0;
    bool ffd_sent = false;
    const auto sink = [&](const streaming::EmittedFrame& f) {
      send_(frame_message(f, fps));
      ++frames;
      if (frames % fps == 0) {
        Stats st;
        st.frames_emitted = frames;
        for (int i = 0; i < streaming::kNumStages; ++i)
          st.rtf[static_cast<std::size_t>(i)] = timings.stage_rtf(static_cast<streaming::Stage>(i));
        if (!ffd_sent) {
          st.ffd_ms = static_cast<double>(streaming::compute_ffd(timings).count()) / 1e6;
          ffd_sent = true;
        }
        send_(st);
      }
    };
    try {
      const auto summary = streaming::run_pipeline(source, model_hooks(model_, settings_, controls_), cfg, sink, timings,
                                                   [audio] { audio->close(); });
      Stats st;
      st.frames_emitted = summary.frames;
      st.rtf = summary.stage_rtf;
      if (summary.frames > 0) {
        st.ffd_ms = summary.ffd_ms;
        st.e2e_rtf = summary.e2e_rtf;
      }
      st.final = true;
      send_(st);
      send_(SessionEnd{summary.frames});
    } catch (const Error& e) {
      send_(error_message(e));
      send_(SessionEnd{frames});
    }
    finished_ = true;
  }

  std::shared_ptr<const diffusion::MotionModel> model_;
  Send send_;
  std::optional<streaming::LatencyProfile> default_simulation_;
  SessionSettings settings_;
  std::string session_id_;
  std::shared_ptr<ControlState> controls_;
  std::shared_ptr<streaming::BoundedQueue<std::vector<double>>> audio_;
  std::thread worker_;
  std::atomic<bool> started_{false}, ended_{false}, finished_{false};
  std::int64_t next_seq_ = 0;
};

}  // namespace streamhead::service
