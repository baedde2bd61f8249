#pragma once

// Real-time factor, first-frame delay and the pipeline timing log.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/error.hpp"

namespace streamhead::streaming {

using Clock = std::chrono::steady_clock;
using Nanos = std::chrono::nanoseconds;

/// Step time divided by the valid (non-overlapping) length it produced.
inline double compute_rtf(Nanos step_time, Nanos valid_len) {
  require(valid_len.count() > 0, ErrorKind::Range, "valid length must be positive");
  return static_cast<double>(step_time.count()) / static_cast<double>(valid_len.count());
}

inline double compute_rtf(double step_ms, double valid_ms) {
  require(valid_ms > 0.0, ErrorKind::Range, "valid length must be positive");
  return step_ms / valid_ms;
}

enum class Stage { Extract = 0, Generate = 1, Render = 2 };
inline constexpr int kNumStages = 3;
inline constexpr std::array<std::string_view, kNumStages> kStageNames = {"extract", "generate", "render"};

enum class EventKind { AudioIn, FeaturesOut, MotionOut, FrameEmitted };

inline std::string_view to_string(EventKind e) {
  switch (e) {
    case EventKind::AudioIn: return "audio_in";
    case EventKind::FeaturesOut: return "features_out";
    case EventKind::MotionOut: return "motion_out";
    case EventKind::FrameEmitted: return "frame_emitted";
  }
  return "unknown";
}

struct TimingEvent {
  EventKind event;
  std::int64_t frame_index = 0;
  std::int64_t t_mono_ns = 0;
};

struct StageStep {
  Stage stage;
  std::int64_t duration_ns = 0;
  std::int64_t valid_ns = 0;  // media time produced by the step
};

/// Thread-safe event and step recorder shared by the pipeline stages.
class PipelineTimings {
 public:
  explicit PipelineTimings(std::string stream_id = "0") : stream_id_(std::move(stream_id)) {}

  static std::int64_t now_ns() {
    return std::chrono::duration_cast<Nanos>(Clock::now().time_since_epoch()).count();
  }

  void record(EventKind e, std::int64_t frame_index, std::int64_t t_ns = now_ns()) {
    std::lock_guard lock(mu_);
    events_.push_back({e, frame_index, t_ns});
  }

  void record_step(Stage s, std::int64_t duration_ns, std::int64_t valid_ns) {
    require(duration_ns >= 0 && valid_ns >= 0, ErrorKind::Range, "negative stage duration");
    std::lock_guard lock(mu_);
    steps_.push_back({s, duration_ns, valid_ns});
  }

  std::vector<TimingEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }
  std::vector<StageStep> steps() const {
    std::lock_guard lock(mu_);
    return steps_;
  }
  const std::string& stream_id() const { return stream_id_; }

  /// Busy time over produced media time for one stage.
  double stage_rtf(Stage s) const {
    std::int64_t busy = 0, valid = 0;
    for (const auto& st : steps())
      if (st.stage == s) busy += st.duration_ns, valid += st.valid_ns;
    return valid > 0 ? compute_rtf(Nanos(busy), Nanos(valid)) : 0.0;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& e : events())
      os << nlohmann::json{{"event", to_string(e.event)},
                           {"stream_id", stream_id_},
                           {"frame_index", e.frame_index},
                           {"t_mono_ns", e.t_mono_ns}}
                .dump()
         << '\n';
  }

 private:
  std::string stream_id_;
  mutable std::mutex mu_;
  std::vector<TimingEvent> events_;
  std::vector<StageStep> steps_;
};

inline std::optional<std::int64_t> first_time(const std::vector<TimingEvent>& events, EventKind kind) {
  std::optional<std::int64_t> t;
  for (const auto& e : events)
    if (e.event == kind && (!t || e.t_mono_ns < *t)) t = e.t_mono_ns;
  return t;
}

/// First frame emitted minus first audio received.
inline Nanos compute_ffd(const std::vector<TimingEvent>& events) {
  const auto frame = first_time(events, EventKind::FrameEmitted);
  require(frame.has_value(), ErrorKind::NoOutput, "no frame was emitted");
  const auto audio = first_time(events, EventKind::AudioIn);
  require(audio.has_value(), ErrorKind::NoOutput, "no audio was received");
  return Nanos(*frame - *audio);
}

inline Nanos compute_ffd(const PipelineTimings& t) { return compute_ffd(t.events()); }

}  // namespace streamhead::streaming
