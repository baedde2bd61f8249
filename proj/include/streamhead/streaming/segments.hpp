#pragma once

// Fixed-window segmentation with overlap and center-weighted fusion of
// overlapping generated segments.
//
// Window k ends at e_k = min(L0 + k*V, total) and spans the last L frames
// before that (clipped at 0). Consecutive windows share up to O = L - V
// frames; of those, the newest min(O, V) are blended pairwise and anything
// older was already emitted and only serves as generation context.

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamhead/error.hpp"

namespace streamhead::streaming {

struct SegmentPlan {
  int window = 80;        // L
  int hop = 70;           // V, the valid length per step
  int first_window = 80;  // L0

  int overlap() const { return window - hop; }
  int blend_length() const { return std::min(overlap(), hop); }

  static SegmentPlan offline() { return {80, 70, 80}; }
  static SegmentPlan online() { return {80, 5, 10}; }

  void validate() const {
    require(window >= 1, ErrorKind::Config, "window must be >= 1");
    require(hop >= 1 && hop <= window, ErrorKind::Config,
            "hop " + std::to_string(hop) + " must be in [1, window=" + std::to_string(window) + "]");
    require(first_window >= hop && first_window <= window, ErrorKind::Config,
            "first_window must be in [hop, window]");
  }

  friend bool operator==(const SegmentPlan&, const SegmentPlan&) = default;
};

struct Window {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
  Eigen::Index end() const { return start + length; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// End frame of window k when the stream is unbounded.
inline Eigen::Index window_end(const SegmentPlan& plan, Eigen::Index k) {
  return plan.first_window + k * static_cast<Eigen::Index>(plan.hop);
}

inline Window window_ending_at(const SegmentPlan& plan, Eigen::Index end) {
  const Eigen::Index start = std::max<Eigen::Index>(0, end - plan.window);
  return {start, end - start};
}

/// Offline plan over a known length. The last window is right-aligned to
/// the end of the clip.
inline std::vector<Window> plan_segments(Eigen::Index total, const SegmentPlan& plan) {
  plan.validate();
  require(total >= 0, ErrorKind::Range, "total length must be >= 0");
  std::vector<Window> out;
  for (Eigen::Index k = 0; total > 0; ++k) {
    const Eigen::Index end = std::min(window_end(plan, k), total);
    out.push_back(window_ending_at(plan, end));
    if (end == total) break;
  }
  return out;
}

/// Triangular profile min(i+1, L-i) scaled to peak 1.
inline Eigen::VectorXd fusion_weights(Eigen::Index L) {
  require(L >= 1, ErrorKind::Range, "fusion window must be >= 1");
  Eigen::VectorXd w(L);
  for (Eigen::Index i = 0; i < L; ++i) w(i) = static_cast<double>(std::min(i + 1, L - i));
  return w / w.maxCoeff();
}

/// Same profile, with the overlap check from the plan.
inline Eigen::VectorXd fusion_weights(Eigen::Index L, Eigen::Index O) {
  require(O >= 0 && O < L, ErrorKind::Range, "overlap must be in [0, L)");
  return fusion_weights(L);
}

struct FusionCarry {
  Eigen::MatrixXd frames;   // not yet emitted frames of the previous segment
  Eigen::VectorXd weights;  // their fusion weights
  Eigen::Index rows() const { return frames.rows(); }
};

struct FuseResult {
  Eigen::MatrixXd emitted;
  FusionCarry carry;
};

/// Blends `carry` into `segment` rows [carry_row, carry_row + carry.rows()),
/// emits rows [carry_row, n - keep) and keeps the last `keep` rows.
inline FuseResult fuse_segments(const FusionCarry& carry, Eigen::Index carry_row, const Eigen::MatrixXd& segment,
                                const Eigen::VectorXd& w, Eigen::Index keep) {
  const Eigen::Index n = segment.rows();
  require(w.size() == n, ErrorKind::Shape, "weights must match segment length");
  require(carry.weights.size() == carry.rows(), ErrorKind::State, "carry weights do not match carry frames");
  require(carry.rows() == 0 || carry.frames.cols() == segment.cols(), ErrorKind::Shape, "carry width mismatch");
  require(keep >= 0 && carry_row >= 0 && carry_row + carry.rows() <= n - keep, ErrorKind::State,
          "carry of " + std::to_string(carry.rows()) + " frames at row " + std::to_string(carry_row) +
              " does not fit a segment of " + std::to_string(n) + " keeping " + std::to_string(keep));
  FuseResult r;
  r.emitted = segment.middleRows(carry_row, n - keep - carry_row);
  for (Eigen::Index i = 0; i < carry.rows(); ++i) {
    const double a = carry.weights(i), b = w(carry_row + i);
    r.emitted.row(i) = (a * carry.frames.row(i) + b * segment.row(carry_row + i)) / (a + b);
  }
  r.carry.frames = segment.bottomRows(keep);
  r.carry.weights = w.tail(keep);
  return r;
}

/// Stateful fuser over a stream of windows from plan_segments or the online
/// equivalent. Emits every frame exactly once and in order.
class SegmentFuser {
 public:
  explicit SegmentFuser(SegmentPlan plan) : plan_((plan.validate(), plan)) {}

  /// `last` marks the final window: nothing is carried past it.
  Eigen::MatrixXd push(const Window& win, const Eigen::MatrixXd& segment, bool last = false) {
    require(segment.rows() == win.length, ErrorKind::Shape, "segment rows do not match the window");
    require(win.end() >= next_ + carry_.rows(), ErrorKind::State, "window does not advance the stream");
    const Eigen::Index carry_row = next_ - win.start;
    require(carry_row >= 0, ErrorKind::State, "window starts after unemitted frames");
    const Eigen::Index keep = last ? 0 : std::min<Eigen::Index>(plan_.blend_length(), win.end() - next_ - carry_.rows());
    auto r = fuse_segments(carry_, carry_row, segment, fusion_weights(win.length), keep);
    next_ += r.emitted.rows();
    carry_ = std::move(r.carry);
    return r.emitted;
  }

  /// Emits the held carry as is (source ended on a window boundary).
  Eigen::MatrixXd flush() {
    Eigen::MatrixXd out = carry_.frames;
    next_ += out.rows();
    carry_ = {};
    return out;
  }

  Eigen::Index emitted() const { return next_; }
  const FusionCarry& carry() const { return carry_; }

 private:
  SegmentPlan plan_;
  FusionCarry carry_;
  Eigen::Index next_ = 0;  // first frame not yet emitted
};

}  // namespace streamhead::streaming
