#pragma once

// Building blocks for the command line tools: WAV input, identity files,
// whole-file generation, latency benchmarking and the per-dimension probe.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/diffusion/model.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/service/config.hpp"
#include "streamhead/service/protocol.hpp"
#include "streamhead/service/session.hpp"
#include "streamhead/streaming/pipeline.hpp"

namespace streamhead::service {

// --- WAV --------------------------------------------------------------------

struct WavAudio {
  int sample_rate = 16000;
  std::vector<double> samples;  // mono, [-1, 1)
};

namespace detail {

inline std::uint32_t le32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return u[0] | (u[1] << 8) | (u[2] << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}
inline std::uint16_t le16(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint16_t>(u[0] | (u[1] << 8));
}
inline void put_le(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

/// 16-bit PCM RIFF/WAVE. Multi-channel input is averaged to mono.
inline WavAudio parse_wav(const std::string& bytes) {
  using detail::le16;
  using detail::le32;
  require(bytes.size() >= 12 && bytes.compare(0, 4, "RIFF") == 0 && bytes.compare(8, 4, "WAVE") == 0,
          ErrorKind::Format, "not a RIFF/WAVE file");
  int channels = 0, bits = 0, rate = 0;
  const char* data = nullptr;
  std::size_t data_size = 0;
  for (std::size_t pos = 12; pos + 8 <= bytes.size();) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t size = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    require(body + size <= bytes.size() || id == "data", ErrorKind::Format, "truncated WAV chunk '" + id + "'");
    if (id == "fmt ") {
      require(size >= 16, ErrorKind::Format, "WAV fmt chunk too short");
      const int format = le16(bytes.data() + body);
      require(format == 1 || format == 0xFFFE, ErrorKind::Format, "only PCM WAV is supported");
      channels = le16(bytes.data() + body + 2);
      rate = static_cast<int>(le32(bytes.data() + body + 4));
      bits = le16(bytes.data() + body + 14);
    } else if (id == "data") {
      data = bytes.data() + body;
      data_size = std::min(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1);
  }
  require(channels > 0, ErrorKind::Format, "WAV has no fmt chunk");
  require(data != nullptr, ErrorKind::Format, "WAV has no data chunk");
  require(bits == 16, ErrorKind::Format, "only 16-bit WAV is supported, got " + std::to_string(bits) + " bits");
  WavAudio out;
  out.sample_rate = rate;
  const std::size_t frames = data_size / (2 * static_cast<std::size_t>(channels));
  out.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c)
      acc += static_cast<std::int16_t>(le16(data + 2 * (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c))));
    out.samples[i] = acc / channels / 32768.0;
  }
  return out;
}

inline WavAudio read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::InvalidInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_wav(ss.str());
}

inline std::string encode_wav(const std::vector<std::int16_t>& pcm, int sample_rate) {
  using detail::put_le;
  const auto data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  std::string out = "RIFF";
  put_le(out, 36 + data_bytes, 4);
  out += "WAVEfmt ";
  put_le(out, 16, 4);
  put_le(out, 1, 2);
  put_le(out, 1, 2);
  put_le(out, static_cast<std::uint32_t>(sample_rate), 4);
  put_le(out, static_cast<std::uint32_t>(sample_rate) * 2, 4);
  put_le(out, 2, 2);
  put_le(out, 16, 2);
  out += "data";
  put_le(out, data_bytes, 4);
  for (std::int16_t s : pcm) put_le(out, static_cast<std::uint16_t>(s), 2);
  return out;
}

inline void write_wav(const std::filesystem::path& path, const std::vector<std::int16_t>& pcm, int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::InvalidInput, "cannot write " + path.string());
  const std::string bytes = encode_wav(pcm, sample_rate);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// --- identity ---------------------------------------------------------------

/// Identity file: {"c_ref": [63], "m_ref": [265], "emotion": 0..7}, every key
/// optional.
inline void apply_identity(const nlohmann::json& doc, SessionSettings& s) {
  static const std::vector<ConfigKey> schema = {
      {"c_ref", ValueType::NumberList, "63 canonical keypoint coordinates (21 x xyz)"},
      {"m_ref", ValueType::NumberList, "265-D reference motion"},
      {"emotion", ValueType::Integer, "emotion index 0..7"}};
  check_schema(doc, schema, "identity");
  if (doc.contains("c_ref")) s.c_ref = doc.at("c_ref").get<std::vector<double>>();
  if (doc.contains("m_ref")) s.m_ref = doc.at("m_ref").get<std::vector<double>>();
  if (doc.contains("emotion")) s.emotion = doc.at("emotion").get<int>();
}

// --- generation -------------------------------------------------------------

struct GenerateOutput {
  std::vector<streaming::EmittedFrame> frames;
  streaming::PipelineSummary summary;
};

/// Runs the streaming pipeline over a whole signal (16 kHz mono).
inline GenerateOutput generate_from_audio(std::shared_ptr<const diffusion::MotionModel> model,
                                          const std::vector<double>& signal, const SessionSettings& s,
                                          streaming::PipelineTimings* timings = nullptr) {
  validate_settings(s, model.get());
  streaming::PipelineConfig cfg;
  cfg.plan = s.plan;
  cfg.queue_capacity = static_cast<std::size_t>(s.queue_capacity);
  cfg.simulate = s.simulate_latency;
  auto controls = std::make_shared<ControlState>(ControlSnapshot{s.emotion, {}, {}});
  streaming::PipelineTimings local("generate");
  GenerateOutput out;
  out.summary = streaming::run_pipeline(
      streaming::vector_source(signal, static_cast<std::size_t>(cfg.extractor.unit_samples())),
      model_hooks(std::move(model), s, controls), cfg,
      [&](const streaming::EmittedFrame& f) { out.frames.push_back(f); }, timings ? *timings : local);
  return out;
}

// --- benchmark --------------------------------------------------------------

struct BenchReport {
  streaming::PipelineSummary summary;
  std::optional<streaming::LatencyProfile> profile;
  double media_seconds = 0.0;
};

/// Simulated run: stages sleep per the profile instead of computing.
inline BenchReport bench_simulated(const streaming::LatencyProfile& profile, double seconds, bool paced,
                                   streaming::PipelineTimings& timings) {
  require(seconds > 0.0, ErrorKind::Config, "bench duration must be positive");
  streaming::PipelineConfig cfg;
  cfg.simulate = profile;
  const auto n = static_cast<std::size_t>(seconds * cfg.extractor.sample_rate);
  BenchReport r;
  r.profile = profile;
  r.media_seconds = seconds;
  r.summary = streaming::run_pipeline(
      streaming::vector_source(std::vector<double>(n, 0.0), static_cast<std::size_t>(cfg.extractor.unit_samples()),
                               paced, cfg.extractor.sample_rate),
      streaming::GeneratorHooks{}, cfg, [](const streaming::EmittedFrame&) {}, timings);
  return r;
}

/// Real run through a loaded model.
inline BenchReport bench_model(std::shared_ptr<const diffusion::MotionModel> model, const std::vector<double>& signal,
                               const SessionSettings& s, streaming::PipelineTimings& timings) {
  BenchReport r;
  r.media_seconds = static_cast<double>(signal.size()) / streaming::ExtractorConfig{}.sample_rate;
  r.summary = generate_from_audio(std::move(model), signal, s, &timings).summary;
  return r;
}

inline std::string bench_table(const BenchReport& r) {
  static constexpr std::array<double, streaming::kNumStages> kReference = {0.115, 0.310, 0.375};
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "stage      step_ms  valid_ms  rtf     reference\n";
  for (int i = 0; i < streaming::kNumStages; ++i) {
    const auto k = static_cast<std::size_t>(i);
    os << std::left << std::setw(10) << streaming::kStageNames[k] << std::right;
    if (r.profile) os << std::setw(8) << (*r.profile)[k].step_ms << std::setw(10) << (*r.profile)[k].valid_ms;
    else os << std::setw(8) << "-" << std::setw(10) << "-";
    os << std::setw(8) << r.summary.stage_rtf[k] << std::setw(10) << kReference[k] << '\n';
  }
  os << "frames " << r.summary.frames << ", media " << r.media_seconds << " s, ffd " << r.summary.ffd_ms
     << " ms, end-to-end rtf " << r.summary.e2e_rtf << '\n';
  return os.str();
}

// --- per-dimension probe ----------------------------------------------------

struct ProbeSnapshot {
  double offset = 0.0;
  motion::ImplicitKeypoints implicit;  // 21 x 3
  motion::Keypoints2D projected;       // 21 x 2
};

/// Offsets one deformation dimension by -eps, 0 and +eps on a neutral frame
/// and renders the keypoints of a fixed identity.
inline std::vector<ProbeSnapshot> probe_dim(int dim, double eps,
                                            const motion::CanonicalKeypoints& c_ref = motion::template_keypoints()) {
  require(dim >= 0 && dim < motion::kDeltaDims, ErrorKind::Range,
          "probe dimension must be in [0, 63), got " + std::to_string(dim));
  require(std::isfinite(eps) && eps != 0.0, ErrorKind::Range, "probe offset must be finite and non-zero");
  std::vector<ProbeSnapshot> out;
  for (double o : {-eps, 0.0, eps}) {
    motion::ControlSpec spec;
    if (o != 0.0) spec.dim_offsets[dim] = o;
    const motion::MotionFrame m = motion::apply_control(motion::MotionFrame{}, spec);
    ProbeSnapshot snap;
    snap.offset = o;
    snap.implicit = motion::compose_keypoints(c_ref, m);
    snap.projected = motion::project_orthographic(snap.implicit);
    out.push_back(std::move(snap));
  }
  return out;
}

struct CoordinateChange {
  int keypoint = 0;
  int axis = 0;
  double delta = 0.0;
};

/// Coordinates of `b` that differ from `a` by more than `tol`.
inline std::vector<CoordinateChange> changed_coordinates(const motion::ImplicitKeypoints& a,
                                                         const motion::ImplicitKeypoints& b, double tol = 1e-12) {
  std::vector<CoordinateChange> out;
  for (int k = 0; k < motion::kNumKeypoints; ++k)
    for (int ax = 0; ax < 3; ++ax) {
      const double d = b.points(k, ax) - a.points(k, ax);
      if (std::abs(d) > tol) out.push_back({k, ax, d});
    }
  return out;
}

inline nlohmann::json to_json(const ProbeSnapshot& s) {
  std::vector<std::vector<double>> implicit, projected;
  for (int k = 0; k < motion::kNumKeypoints; ++k) {
    implicit.push_back({s.implicit.points(k, 0), s.implicit.points(k, 1), s.implicit.points(k, 2)});
    projected.push_back({s.projected(k, 0), s.projected(k, 1)});
  }
  return {{"offset", s.offset}, {"implicit", implicit}, {"projected", projected}};
}

}  // namespace streamhead::service
