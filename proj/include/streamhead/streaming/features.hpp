#pragma once

// Chunked causal audio features at 25 fps. A deterministic stand-in for a
// pretrained speech encoder: mel-style band energies followed by a causal
// self-similarity smoother that attends over a cached context of recent
// frames, seeded with a fixed pseudo-context corpus.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "streamhead/error.hpp"
#include "streamhead/rng.hpp"

namespace streamhead::streaming {

using Matrix = Eigen::MatrixXd;

struct ExtractorConfig {
  int sample_rate = 16000;
  int fps = 25;
  int window = 1024;  // analysis window ending at each hop boundary
  int bands = 32;
  double min_hz = 80.0;
  double max_hz = 7600.0;
  double power_ref = 1e-4;
  int context_frames = 50;      // pseudo-context prefix length P
  double smoother_mix = 0.5;    // weight of the attended context
  double similarity_scale = 4.0;
  double recency_frames = 4.0;
  double gate_kappa = 0.25;
  bool seed_corpus_prefix = true;

  int hop() const { return sample_rate / fps; }
  int unit_samples() const { return hop() * 10; }  // 0.4 s

  void validate() const {
    require(sample_rate > 0 && fps > 0 && sample_rate % fps == 0, ErrorKind::Config,
            "sample rate must be a positive multiple of fps");
    require(window >= hop(), ErrorKind::Config, "analysis window shorter than hop");
    require(bands >= 1 && context_frames >= 1, ErrorKind::Config, "bands and context must be positive");
  }
};

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// bands x (window/2 + 1) triangular filterbank.
inline Matrix mel_filterbank(const ExtractorConfig& cfg) {
  const int bins = cfg.window / 2 + 1;
  Matrix fb = Matrix::Zero(cfg.bands, bins);
  const double lo = hz_to_mel(cfg.min_hz), hi = hz_to_mel(cfg.max_hz);
  std::vector<double> edges(static_cast<std::size_t>(cfg.bands + 2));
  for (int i = 0; i < cfg.bands + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (cfg.bands + 1));
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.window;
  for (int b = 0; b < cfg.bands; ++b) {
    const double l = edges[static_cast<std::size_t>(b)], c = edges[static_cast<std::size_t>(b + 1)],
                 r = edges[static_cast<std::size_t>(b + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > l && f <= c) w = (f - l) / (c - l);
      else if (f > c && f < r) w = (r - f) / (r - c);
      fb(b, k) = w;
    }
    const double s = fb.row(b).sum();
    if (s > 0.0) fb.row(b) /= s;
  }
  return fb;
}

inline std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Stateless per-frame spectral analysis shared by the streaming and batch
/// paths. `window` holds exactly cfg.window samples ending at the frame end.
class BandAnalyzer {
 public:
  explicit BandAnalyzer(const ExtractorConfig& cfg)
      : cfg_(cfg), filterbank_(mel_filterbank(cfg)), taper_(hann(cfg.window)), buffer_(static_cast<std::size_t>(cfg.window)) {
    double e = 0.0;
    for (double t : taper_) e += t * t;
    window_energy_ = e;
  }

  Eigen::VectorXd analyze(std::span<const double> window) {
    for (std::size_t i = 0; i < buffer_.size(); ++i) buffer_[i] = window[i] * taper_[i];
    fft_.fwd(spectrum_, buffer_);
    const int bins = cfg_.window / 2 + 1;
    Eigen::VectorXd power(bins);
    for (int k = 0; k < bins; ++k) power(k) = std::norm(spectrum_[static_cast<std::size_t>(k)]) / window_energy_;
    Eigen::VectorXd bands = filterbank_ * power;
    for (Eigen::Index b = 0; b < bands.size(); ++b) bands(b) = std::max(0.0, std::log1p(bands(b) / cfg_.power_ref));
    return bands;
  }

 private:
  ExtractorConfig cfg_;
  Matrix filterbank_;
  std::vector<double> taper_;
  std::vector<double> buffer_;
  std::vector<std::complex<double>> spectrum_;
  Eigen::FFT<double> fft_;
  double window_energy_ = 1.0;
};

/// Causal smoother output for one frame given its raw features and the
/// preceding context rows (oldest first, at most P-1 of them used).
inline Eigen::VectorXd smooth_frame(const ExtractorConfig& cfg, const Eigen::VectorXd& x,
                                    const std::vector<const Eigen::VectorXd*>& context) {
  const double rms = x.norm() / std::sqrt(static_cast<double>(x.size()));
  if (rms == 0.0) return Eigen::VectorXd::Zero(x.size());
  const double gate = rms / (rms + cfg.gate_kappa);
  const std::size_t n = context.size();
  std::vector<double> logits(n + 1);
  double mx = -1e300;
  for (std::size_t j = 0; j <= n; ++j) {
    const Eigen::VectorXd& y = j < n ? *context[j] : x;
    const double lag = static_cast<double>(n - j);
    const double d2 = (x - y).squaredNorm() / static_cast<double>(x.size());
    logits[j] = -d2 / cfg.similarity_scale - lag / cfg.recency_frames;
    mx = std::max(mx, logits[j]);
  }
  double z = 0.0;
  Eigen::VectorXd ctx = Eigen::VectorXd::Zero(x.size());
  for (std::size_t j = 0; j <= n; ++j) {
    const double w = std::exp(logits[j] - mx);
    z += w;
    ctx += w * (j < n ? *context[j] : x);
  }
  ctx /= z;
  return (1.0 - cfg.smoother_mix) * x + cfg.smoother_mix * gate * ctx;
}

/// Raw feature rows of the fixed pseudo-context corpus.
inline std::vector<Eigen::VectorXd> corpus_prefix(const ExtractorConfig& cfg) {
  const int hop = cfg.hop();
  const int frames = cfg.context_frames;
  const int total = frames * hop + cfg.window;
  std::vector<double> signal(static_cast<std::size_t>(total));
  Rng rng(0x5EED'C0A9'0000'0001ULL);
  // Deterministic voiced-noise "speech" with a slow syllabic envelope.
  double lp = 0.0;
  for (int i = 0; i < total; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    const double env = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * 4.0 * t);
    lp = 0.85 * lp + 0.15 * rng.normal();
    signal[static_cast<std::size_t>(i)] = 0.1 * env * (lp + 0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * t));
  }
  BandAnalyzer analyzer(cfg);
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    const int end = cfg.window + f * hop;
    rows.push_back(analyzer.analyze(std::span<const double>(signal).subspan(static_cast<std::size_t>(end - cfg.window),
                                                                            static_cast<std::size_t>(cfg.window))));
  }
  return rows;
}

}  // namespace detail

/// Everything the extractor carries between chunks.
struct FeatureExtractorState {
  std::deque<Eigen::VectorXd> context_cache;  // raw rows, at most P
  std::vector<double> sample_history;         // last (window - hop) samples
  std::vector<double> sample_remainder;       // samples short of a full hop
  std::int64_t total_frames_emitted = 0;

  static FeatureExtractorState initial(const ExtractorConfig& cfg) {
    cfg.validate();
    FeatureExtractorState s;
    s.sample_history.assign(static_cast<std::size_t>(cfg.window - cfg.hop()), 0.0);
    if (cfg.seed_corpus_prefix) {
      for (auto& row : detail::corpus_prefix(cfg)) s.context_cache.push_back(std::move(row));
    }
    return s;
  }

  /// No pseudo-context at all.
  static FeatureExtractorState empty(const ExtractorConfig& cfg) {
    ExtractorConfig c = cfg;
    c.seed_corpus_prefix = false;
    return initial(c);
  }
};

struct PcmChunk {
  int sample_rate = 16000;
  std::vector<double> samples;  // mono, [-1, 1]
};

inline std::vector<double> pcm16_to_double(std::span<const std::int16_t> pcm) {
  std::vector<double> out(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) out[i] = static_cast<double>(pcm[i]) / 32768.0;
  return out;
}

/// Incremental extractor. Holds an FFT plan, so one instance per worker.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorConfig cfg = {}) : cfg_(cfg), analyzer_((cfg.validate(), cfg)) {}

  const ExtractorConfig& config() const { return cfg_; }

  /// Consumes samples and returns one feature row per completed hop.
  Matrix process(std::span<const double> samples, FeatureExtractorState& state) {
    const std::size_t hop = static_cast<std::size_t>(cfg_.hop());
    std::vector<double>& pending = state.sample_remainder;
    pending.insert(pending.end(), samples.begin(), samples.end());
    const std::size_t n_frames = pending.size() / hop;
    Matrix out(static_cast<Eigen::Index>(n_frames), cfg_.bands);
    std::vector<double> window(static_cast<std::size_t>(cfg_.window));
    const std::size_t hist = state.sample_history.size();
    for (std::size_t f = 0; f < n_frames; ++f) {
      std::copy(state.sample_history.begin(), state.sample_history.end(), window.begin());
      std::copy(pending.begin() + static_cast<std::ptrdiff_t>(f * hop),
                pending.begin() + static_cast<std::ptrdiff_t>((f + 1) * hop), window.begin() + static_cast<std::ptrdiff_t>(hist));
      // history <- last `hist` samples of the window
      std::copy(window.end() - static_cast<std::ptrdiff_t>(hist), window.end(), state.sample_history.begin());
      out.row(static_cast<Eigen::Index>(f)) = emit(analyzer_.analyze(window), state).transpose();
    }
    pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(n_frames * hop));
    return out;
  }

  /// Zero-pads a trailing partial hop into one last frame.
  Matrix flush(FeatureExtractorState& state) {
    if (state.sample_remainder.empty()) return Matrix(0, cfg_.bands);
    const std::size_t pad = static_cast<std::size_t>(cfg_.hop()) - state.sample_remainder.size();
    std::vector<double> zeros(pad, 0.0);
    return process(zeros, state);
  }

 private:
  Eigen::VectorXd emit(Eigen::VectorXd raw, FeatureExtractorState& state) {
    const std::size_t keep = static_cast<std::size_t>(cfg_.context_frames) - 1;
    std::vector<const Eigen::VectorXd*> ctx;
    const std::size_t start = state.context_cache.size() > keep ? state.context_cache.size() - keep : 0;
    for (std::size_t j = start; j < state.context_cache.size(); ++j) ctx.push_back(&state.context_cache[j]);
    Eigen::VectorXd y = detail::smooth_frame(cfg_, raw, ctx);
    state.context_cache.push_back(std::move(raw));
    while (state.context_cache.size() > static_cast<std::size_t>(cfg_.context_frames)) state.context_cache.pop_front();
    ++state.total_frames_emitted;
    return y;
  }

  ExtractorConfig cfg_;
  detail::BandAnalyzer analyzer_;
};

struct ChunkResult {
  Matrix features;
  FeatureExtractorState state;
};

/// Functional form: the input state is left untouched.
inline ChunkResult extract_features_chunk(const PcmChunk& chunk, const FeatureExtractorState& state,
                                          const ExtractorConfig& cfg = {}) {
  require(chunk.sample_rate == cfg.sample_rate, ErrorKind::Config,
          "expected " + std::to_string(cfg.sample_rate) + " Hz audio, got " + std::to_string(chunk.sample_rate));
  FeatureExtractor ex(cfg);
  ChunkResult r{Matrix(), state};
  r.features = ex.process(chunk.samples, r.state);
  return r;
}

/// One-shot extraction over a whole signal. Frames the padded signal
/// directly instead of going through the incremental state machine.
inline Matrix extract_features_full(std::span<const double> signal, const ExtractorConfig& cfg = {}) {
  cfg.validate();
  const std::size_t hop = static_cast<std::size_t>(cfg.hop());
  const std::size_t lead = static_cast<std::size_t>(cfg.window) - hop;
  const std::size_t frames = (signal.size() + hop - 1) / hop;
  std::vector<double> padded(lead + frames * hop, 0.0);
  std::copy(signal.begin(), signal.end(), padded.begin() + static_cast<std::ptrdiff_t>(lead));

  detail::BandAnalyzer analyzer(cfg);
  std::vector<Eigen::VectorXd> raw;
  if (cfg.seed_corpus_prefix) raw = detail::corpus_prefix(cfg);
  const std::size_t prefix = raw.size();
  for (std::size_t f = 0; f < frames; ++f)
    raw.push_back(analyzer.analyze(std::span<const double>(padded).subspan(f * hop, static_cast<std::size_t>(cfg.window))));

  Matrix out(static_cast<Eigen::Index>(frames), cfg.bands);
  const std::size_t keep = static_cast<std::size_t>(cfg.context_frames) - 1;
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t i = prefix + f;
    std::vector<const Eigen::VectorXd*> ctx;
    for (std::size_t j = i > keep ? i - keep : 0; j < i; ++j) ctx.push_back(&raw[j]);
    out.row(static_cast<Eigen::Index>(f)) = detail::smooth_frame(cfg, raw[i], ctx).transpose();
  }
  return out;
}

}  // namespace streamhead::streaming
