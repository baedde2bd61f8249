#pragma once

// Three-stage streaming pipeline: feature extraction, motion generation with
// segment fusion, and a keypoint render stub. Stages run on their own
// threads and talk only through bounded queues.

#include <array>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/streaming/features.hpp"
#include "streamhead/streaming/metrics.hpp"
#include "streamhead/streaming/queue.hpp"
#include "streamhead/streaming/segments.hpp"

namespace streamhead::streaming {

/// Simulated cost of a stage: `step_ms` of work per `valid_ms` of media.
struct StageLatency {
  double step_ms = 0.0;
  double valid_ms = 1.0;
};
using LatencyProfile = std::array<StageLatency, kNumStages>;

/// Step times and valid lengths of the reference deployment.
inline LatencyProfile reference_latency() { return {{{23.0, 200.0}, {62.0, 200.0}, {15.0, 40.0}}}; }

struct PipelineConfig {
  SegmentPlan plan = SegmentPlan::online();
  std::size_t queue_capacity = 4;
  std::optional<LatencyProfile> simulate;  // sleep instead of computing
  ExtractorConfig extractor;

  void validate() const {
    plan.validate();
    extractor.validate();
    require(queue_capacity >= 1, ErrorKind::Config, "queue capacity must be >= 1");
    if (simulate)
      for (const auto& s : *simulate)
        require(s.step_ms >= 0.0 && s.valid_ms > 0.0, ErrorKind::Config, "invalid simulated latency");
  }

  std::int64_t frame_ns() const { return 1'000'000'000LL / extractor.fps; }
};

/// Returns the next chunk of mono samples, or nullopt when the stream ends.
using AudioSource = std::function<std::optional<std::vector<double>>()>;

/// Splits a signal into fixed chunks; optionally releases each chunk only
/// once its media time has elapsed since the first call.
inline AudioSource vector_source(std::vector<double> signal, std::size_t chunk, bool paced = false, int sample_rate = 16000) {
  require(chunk >= 1, ErrorKind::Config, "chunk must be >= 1");
  struct State {
    std::vector<double> signal;
    std::size_t pos = 0;
    std::optional<Clock::time_point> t0;
  };
  auto st = std::make_shared<State>();
  st->signal = std::move(signal);
  return [st, chunk, paced, sample_rate]() -> std::optional<std::vector<double>> {
    if (st->pos >= st->signal.size()) return std::nullopt;
    const auto now = Clock::now();
    if (!st->t0) st->t0 = now;
    if (paced) {
      const auto due = *st->t0 + std::chrono::duration_cast<Clock::duration>(
                                     std::chrono::duration<double>(static_cast<double>(st->pos) / sample_rate));
      std::this_thread::sleep_until(due);
    }
    const std::size_t n = std::min(chunk, st->signal.size() - st->pos);
    std::vector<double> out(st->signal.begin() + static_cast<std::ptrdiff_t>(st->pos),
                            st->signal.begin() + static_cast<std::ptrdiff_t>(st->pos + n));
    st->pos += n;
    return out;
  };
}

struct GeneratorHooks {
  /// Motion for `window` (window.length x 265) given its audio features.
  /// `boundary` is the first frame this step will emit.
  std::function<Eigen::MatrixXd(const Window& window, Eigen::Index boundary, const Eigen::MatrixXd& features)> generate;
  /// Control spec in force for frames emitted from `boundary` on.
  std::function<motion::ControlSpec(Eigen::Index boundary)> control;
  /// Frame used in simulated mode.
  motion::MotionVector idle_frame = motion::neutral_motion();
  motion::CanonicalKeypoints c_ref = motion::template_keypoints();
};

struct EmittedFrame {
  std::int64_t frame_index = 0;
  motion::MotionVector motion;
  motion::Keypoints2D keypoints;
};

using FrameSink = std::function<void(const EmittedFrame&)>;

struct PipelineSummary {
  std::int64_t frames = 0;
  std::array<double, kNumStages> stage_rtf{};
  double ffd_ms = 0.0;
  double e2e_rtf = 0.0;  // (last frame - first audio) / media duration
};

/// Render stub: compose implicit keypoints and drop z.
inline motion::Keypoints2D render_keypoints(const motion::CanonicalKeypoints& c_ref, const motion::MotionVector& v) {
  return motion::project_orthographic(
      motion::compose_keypoints(c_ref, motion::unpack_motion(motion::sanitize_pose_bins(v))));
}

namespace detail {

struct FeatureBatch {
  std::int64_t first_frame = 0;
  Eigen::MatrixXd rows;
};

struct MotionBatch {
  std::int64_t first_frame = 0;
  Eigen::MatrixXd rows;
};

inline void simulate_step(const StageLatency& s, std::int64_t valid_ns) {
  const double ms = s.step_ms * (static_cast<double>(valid_ns) / 1e6) / s.valid_ms;
  std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

/// Runs `fn`, turning an exception into a stored error and an abort.
class ErrorSlot {
 public:
  template <typename F>
  void guard(F&& fn, const std::function<void()>& abort) {
    try {
      fn();
    } catch (...) {
      {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      abort();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr error_;
};

}  // namespace detail

/// Runs the pipeline to completion. `on_abort` is called if a stage fails so
/// the owner can unblock the audio source.
inline PipelineSummary run_pipeline(const AudioSource& source, const GeneratorHooks& hooks, const PipelineConfig& cfg,
                                    const FrameSink& sink, PipelineTimings& timings,
                                    const std::function<void()>& on_abort = {}) {
  cfg.validate();
  require(static_cast<bool>(source), ErrorKind::Config, "pipeline needs an audio source");
  require(cfg.simulate.has_value() || static_cast<bool>(hooks.generate), ErrorKind::Config,
          "pipeline needs a generator unless simulating");
  const std::int64_t frame_ns = cfg.frame_ns();
  const std::size_t hop = static_cast<std::size_t>(cfg.extractor.hop());
  const std::size_t unit = static_cast<std::size_t>(cfg.extractor.unit_samples());
  const SegmentPlan plan = cfg.plan;

  BoundedQueue<detail::FeatureBatch> features_q(cfg.queue_capacity);
  BoundedQueue<detail::MotionBatch> motion_q(cfg.queue_capacity);
  detail::ErrorSlot errors;
  const std::function<void()> abort_all = [&] {
    features_q.close();
    motion_q.close();
    if (on_abort) on_abort();
  };

  // Stage 1: re-chunk to 0.4 s units and extract features.
  const auto extract_stage = [&] {
    FeatureExtractor ex(cfg.extractor);
    auto state = FeatureExtractorState::initial(cfg.extractor);
    std::vector<double> pending;
    std::int64_t samples_in = 0, frames_out = 0;
    std::size_t sim_remainder = 0;
    const auto run_unit = [&](std::span<const double> samples, bool final) {
      const auto t0 = Clock::now();
      Eigen::MatrixXd rows;
      if (cfg.simulate) {
        const std::size_t total = sim_remainder + samples.size();
        std::size_t n = total / hop;
        sim_remainder = total % hop;
        if (final && sim_remainder > 0) ++n, sim_remainder = 0;
        rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), cfg.extractor.bands);
        detail::simulate_step((*cfg.simulate)[0], static_cast<std::int64_t>(n) * frame_ns);
      } else {
        rows = ex.process(samples, state);
        if (final) {
          const Eigen::MatrixXd tail = ex.flush(state);
          Eigen::MatrixXd all(rows.rows() + tail.rows(), rows.cols());
          all << rows, tail;
          rows = std::move(all);
        }
      }
      if (rows.rows() == 0) return;
      timings.record_step(Stage::Extract, std::chrono::duration_cast<Nanos>(Clock::now() - t0).count(),
                          rows.rows() * frame_ns);
      timings.record(EventKind::FeaturesOut, frames_out);
      const std::int64_t n = rows.rows();
      if (!features_q.push({frames_out, std::move(rows)})) return;
      frames_out += n;
    };
    while (auto chunk = source()) {
      timings.record(EventKind::AudioIn, samples_in / static_cast<std::int64_t>(hop));
      samples_in += static_cast<std::int64_t>(chunk->size());
      pending.insert(pending.end(), chunk->begin(), chunk->end());
      std::size_t used = 0;
      for (; pending.size() - used >= unit; used += unit)
        run_unit(std::span<const double>(pending).subspan(used, unit), false);
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(used));
    }
    run_unit(pending, true);
    features_q.close();
  };

  // Stage 2: windowed generation and fusion.
  const auto generate_stage = [&] {
    SegmentFuser fuser(plan);
    Eigen::MatrixXd feats(0, cfg.extractor.bands);
    Eigen::Index k = 0;
    const auto run_window = [&](Eigen::Index end, bool last) {
      const auto t0 = Clock::now();
      const Window win = window_ending_at(plan, end);
      const Eigen::Index boundary = fuser.emitted();
      Eigen::MatrixXd seg;
      if (cfg.simulate) {
        seg = hooks.idle_frame.values.transpose().replicate(win.length, 1);
      } else {
        seg = hooks.generate(win, boundary, feats.middleRows(win.start, win.length));
        require(seg.rows() == win.length && seg.cols() == motion::kMotionDims, ErrorKind::Shape,
                "generator returned the wrong shape");
      }
      Eigen::MatrixXd out = fuser.push(win, seg, last);
      if (last) {
        const Eigen::MatrixXd rest = fuser.flush();
        Eigen::MatrixXd all(out.rows() + rest.rows(), out.cols());
        all << out, rest;
        out = std::move(all);
      }
      if (hooks.control) {
        const motion::ControlSpec spec = hooks.control(boundary);
        for (Eigen::Index r = 0; r < out.rows(); ++r)
          out.row(r) = motion::apply_control(motion::MotionVector::from(out.row(r)), spec).values.transpose();
      }
      if (cfg.simulate) detail::simulate_step((*cfg.simulate)[1], out.rows() * frame_ns);
      timings.record_step(Stage::Generate, std::chrono::duration_cast<Nanos>(Clock::now() - t0).count(),
                          out.rows() * frame_ns);
      for (Eigen::Index r = 0; r < out.rows(); ++r) timings.record(EventKind::MotionOut, boundary + r);
      motion_q.push({boundary, std::move(out)});
    };
    while (auto batch = features_q.pop()) {
      require(batch->first_frame == feats.rows(), ErrorKind::State, "feature batches out of order");
      feats.conservativeResize(feats.rows() + batch->rows.rows(), Eigen::NoChange);
      feats.bottomRows(batch->rows.rows()) = batch->rows;
      for (; window_end(plan, k) <= feats.rows(); ++k) run_window(window_end(plan, k), false);
    }
    const Eigen::Index total = feats.rows();
    if (total > fuser.emitted() + fuser.carry().rows()) {
      run_window(total, true);
    } else if (fuser.carry().rows() > 0) {
      const Eigen::Index boundary = fuser.emitted();
      Eigen::MatrixXd rest = fuser.flush();
      if (hooks.control) {
        const motion::ControlSpec spec = hooks.control(boundary);
        for (Eigen::Index r = 0; r < rest.rows(); ++r)
          rest.row(r) = motion::apply_control(motion::MotionVector::from(rest.row(r)), spec).values.transpose();
      }
      for (Eigen::Index r = 0; r < rest.rows(); ++r) timings.record(EventKind::MotionOut, boundary + r);
      motion_q.push({boundary, std::move(rest)});
    }
    motion_q.close();
  };

  // Stage 3: compose and project keypoints, hand frames to the sink.
  std::int64_t rendered = 0;
  const motion::Keypoints2D idle_keypoints = render_keypoints(hooks.c_ref, hooks.idle_frame);
  const auto render_stage = [&] {
    while (auto batch = motion_q.pop()) {
      for (Eigen::Index r = 0; r < batch->rows.rows(); ++r) {
        const auto t0 = Clock::now();
        EmittedFrame f;
        f.frame_index = batch->first_frame + r;
        require(f.frame_index == rendered, ErrorKind::State, "motion frames out of order");
        f.motion = motion::MotionVector::from(batch->rows.row(r));
        if (cfg.simulate) {
          f.keypoints = idle_keypoints;
          detail::simulate_step((*cfg.simulate)[2], frame_ns);
        } else {
          f.keypoints = render_keypoints(hooks.c_ref, f.motion);
        }
        timings.record_step(Stage::Render, std::chrono::duration_cast<Nanos>(Clock::now() - t0).count(), frame_ns);
        if (sink) sink(f);
        timings.record(EventKind::FrameEmitted, f.frame_index);
        ++rendered;
      }
    }
  };

  std::thread t1([&] { errors.guard(extract_stage, abort_all); });
  std::thread t2([&] { errors.guard(generate_stage, abort_all); });
  std::thread t3([&] { errors.guard(render_stage, abort_all); });
  t1.join();
  t2.join();
  t3.join();
  errors.rethrow();

  PipelineSummary s;
  s.frames = rendered;
  for (int i = 0; i < kNumStages; ++i) s.stage_rtf[static_cast<std::size_t>(i)] = timings.stage_rtf(static_cast<Stage>(i));
  if (rendered > 0) {
    const auto events = timings.events();
    s.ffd_ms = static_cast<double>(compute_ffd(events).count()) / 1e6;
    std::int64_t last = 0;
    for (const auto& e : events)
      if (e.event == EventKind::FrameEmitted) last = std::max(last, e.t_mono_ns);
    s.e2e_rtf = static_cast<double>(last - *first_time(events, EventKind::AudioIn)) /
                static_cast<double>(rendered * frame_ns);
  }
  return s;
}

}  // namespace streamhead::streaming
