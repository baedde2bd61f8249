#pragma once

// Session wire protocol: one JSON object per websocket text message, tagged
// by "type". Optional fields are omitted when absent so that every message
// round-trips to identical JSON.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/streaming/pipeline.hpp"
#include "streamhead/streaming/segments.hpp"

namespace streamhead::service {

using nlohmann::json;

inline constexpr int kProtocolVersion = 1;

// --- base64 PCM -------------------------------------------------------------

inline std::string encode_pcm(const std::vector<std::int16_t>& pcm) {
  namespace b64 = boost::beast::detail::base64;
  std::vector<unsigned char> bytes(pcm.size() * 2);
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(pcm[i]);
    bytes[2 * i] = static_cast<unsigned char>(u & 0xFF);
    bytes[2 * i + 1] = static_cast<unsigned char>(u >> 8);
  }
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::vector<std::int16_t> decode_pcm(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  // The decoder stops quietly at the first bad character, so check the shape first.
  const std::size_t pad = text.find_first_of('=') == std::string::npos ? 0 : text.size() - text.find_first_of('=');
  const bool alphabet = std::all_of(text.begin(), text.end() - static_cast<std::ptrdiff_t>(pad), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/';
  });
  require(text.size() % 4 == 0 && pad <= 2 && alphabet &&
              text.find_first_not_of('=', text.size() - pad) == std::string::npos,
          ErrorKind::Protocol, "pcm is not valid base64");
  std::vector<unsigned char> bytes(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(bytes.data(), text.data(), text.size());
  require(read == text.size() - pad, ErrorKind::Protocol, "pcm is not valid base64");
  require(written % 2 == 0, ErrorKind::Protocol, "pcm byte count must be even (16-bit samples)");
  std::vector<std::int16_t> pcm(written / 2);
  for (std::size_t i = 0; i < pcm.size(); ++i)
    pcm[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8)));
  return pcm;
}

// --- messages ---------------------------------------------------------------

struct SessionSettings {
  int steps = 10;
  std::uint64_t seed = 0;
  streaming::SegmentPlan plan = streaming::SegmentPlan::online();
  int emotion = 0;
  bool use_ckp = true;
  bool use_emotion = true;
  std::optional<std::vector<double>> c_ref;  // 63 canonical keypoint coordinates
  std::optional<std::vector<double>> m_ref;  // 265-D initial motion
  std::optional<streaming::LatencyProfile> simulate_latency;
  int queue_capacity = 4;

  friend bool operator==(const SessionSettings& a, const SessionSettings& b) {
    const auto lat = [](const std::optional<streaming::LatencyProfile>& p) {
      std::vector<double> v;
      if (p)
        for (const auto& s : *p) v.push_back(s.step_ms), v.push_back(s.valid_ms);
      return std::make_pair(p.has_value(), v);
    };
    return a.steps == b.steps && a.seed == b.seed && a.plan == b.plan && a.emotion == b.emotion &&
           a.use_ckp == b.use_ckp && a.use_emotion == b.use_emotion && a.c_ref == b.c_ref && a.m_ref == b.m_ref &&
           lat(a.simulate_latency) == lat(b.simulate_latency) && a.queue_capacity == b.queue_capacity;
  }
};

struct SessionStart {
  std::string session_id;
  SessionSettings settings;
  friend bool operator==(const SessionStart&, const SessionStart&) = default;
};

struct AudioChunk {
  std::int64_t seq = 0;
  int sample_rate = 16000;
  std::vector<std::int16_t> pcm;
  friend bool operator==(const AudioChunk&, const AudioChunk&) = default;
};

struct ControlUpdate {
  std::optional<std::int64_t> effective_frame;  // first segment boundary >= this frame
  std::optional<int> emotion;
  std::optional<conditioning::EyeState> eye;
  std::optional<motion::ControlSpec> control;

  friend bool operator==(const ControlUpdate& a, const ControlUpdate& b) {
    const auto eye_eq = a.eye.has_value() == b.eye.has_value() && (!a.eye || a.eye->flatten() == b.eye->flatten());
    return a.effective_frame == b.effective_frame && a.emotion == b.emotion && eye_eq && a.control == b.control;
  }
};

struct MotionFrameMsg {
  std::int64_t frame_index = 0;
  double t_media_ms = 0.0;
  std::vector<double> motion;                  // 265
  std::vector<std::array<double, 2>> keypoints;  // 21 projected points
  friend bool operator==(const MotionFrameMsg&, const MotionFrameMsg&) = default;
};

struct Stats {
  std::int64_t frames_emitted = 0;
  std::array<double, streaming::kNumStages> rtf{};
  std::optional<double> ffd_ms;
  std::optional<double> e2e_rtf;
  bool final = false;
  friend bool operator==(const Stats&, const Stats&) = default;
};

struct ErrorMsg {
  std::string code;
  std::string message;
  friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

struct SessionEnd {
  std::optional<std::int64_t> frames;  // set by the server
  friend bool operator==(const SessionEnd&, const SessionEnd&) = default;
};

using Message = std::variant<SessionStart, AudioChunk, ControlUpdate, MotionFrameMsg, Stats, ErrorMsg, SessionEnd>;

inline std::string_view message_type(const Message& m) {
  static constexpr std::array<std::string_view, 7> kNames = {"session.start", "audio.chunk",   "control.update",
                                                             "motion.frame",  "stats",         "error",
                                                             "session.end"};
  return kNames[m.index()];
}

// --- control spec -----------------------------------------------------------

inline json control_to_json(const motion::ControlSpec& s) {
  json j;
  j["region_mask"] = std::vector<int>(s.region_mask.begin(), s.region_mask.end());
  if (s.magnitude_clamp) j["magnitude_clamp"] = std::vector<double>(s.magnitude_clamp->begin(), s.magnitude_clamp->end());
  json offsets = json::object();
  for (auto [d, v] : s.dim_offsets) offsets[std::to_string(d)] = v;
  j["dim_offsets"] = offsets;
  if (s.pose_override) {
    const auto& p = *s.pose_override;
    j["pose_override"] = {{"yaw", p.euler.yaw},
                          {"pitch", p.euler.pitch},
                          {"roll", p.euler.roll},
                          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
  }
  j["enabled"] = s.enabled;
  return j;
}

inline motion::ControlSpec control_from_json(const json& j) {
  motion::ControlSpec s;
  if (j.contains("region_mask")) {
    const auto m = j.at("region_mask").get<std::vector<int>>();
    require(m.size() == s.region_mask.size(), ErrorKind::Protocol, "region_mask must have 63 entries");
    for (std::size_t i = 0; i < m.size(); ++i) s.region_mask[i] = static_cast<std::uint8_t>(m[i]);
  }
  if (j.contains("magnitude_clamp")) {
    const auto& c = j.at("magnitude_clamp");
    std::array<double, motion::kDeltaDims> arr;
    if (c.is_number()) {
      arr.fill(c.get<double>());
    } else {
      const auto v = c.get<std::vector<double>>();
      require(v.size() == arr.size(), ErrorKind::Protocol, "magnitude_clamp must be a number or 63 entries");
      std::copy(v.begin(), v.end(), arr.begin());
    }
    s.magnitude_clamp = arr;
  }
  if (j.contains("dim_offsets"))
    for (const auto& [k, v] : j.at("dim_offsets").items()) {
      std::size_t used = 0;
      int dim = -1;
      try {
        dim = std::stoi(k, &used);
      } catch (const std::exception&) {
      }
      require(used == k.size() && dim >= 0, ErrorKind::Protocol, "dim_offsets key '" + k + "' is not a dimension");
      s.dim_offsets[dim] = v.get<double>();
    }
  if (j.contains("pose_override")) {
    const auto& p = j.at("pose_override");
    motion::PoseOverride o;
    o.euler = {p.at("yaw").get<double>(), p.at("pitch").get<double>(), p.at("roll").get<double>()};
    if (p.contains("translation")) {
      const auto t = p.at("translation").get<std::vector<double>>();
      require(t.size() == 3, ErrorKind::Protocol, "translation must have 3 entries");
      o.translation = {t[0], t[1], t[2]};
    }
    s.pose_override = o;
  }
  s.enabled = j.value("enabled", true);
  s.validate();
  return s;
}

// --- serialization ----------------------------------------------------------

inline json to_json(const Message& msg) {
  json j;
  j["type"] = message_type(msg);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SessionStart>) {
          const auto& s = m.settings;
          j["session_id"] = m.session_id;
          json c = {{"steps", s.steps},
                    {"seed", s.seed},
                    {"plan", {{"window", s.plan.window}, {"hop", s.plan.hop}, {"first_window", s.plan.first_window}}},
                    {"emotion", s.emotion},
                    {"use_ckp", s.use_ckp},
                    {"use_emotion", s.use_emotion},
                    {"queue_capacity", s.queue_capacity}};
          if (s.c_ref) c["c_ref"] = *s.c_ref;
          if (s.m_ref) c["m_ref"] = *s.m_ref;
          if (s.simulate_latency) {
            json lat = json::array();
            for (const auto& st : *s.simulate_latency) lat.push_back({st.step_ms, st.valid_ms});
            c["simulate_latency"] = lat;
          }
          j["config"] = c;
        } else if constexpr (std::is_same_v<T, AudioChunk>) {
          j["seq"] = m.seq;
          j["sample_rate"] = m.sample_rate;
          j["pcm"] = encode_pcm(m.pcm);
        } else if constexpr (std::is_same_v<T, ControlUpdate>) {
          if (m.effective_frame) j["effective_frame"] = *m.effective_frame;
          if (m.emotion) j["emotion"] = *m.emotion;
          if (m.eye) {
            const auto e = m.eye->flatten();
            j["eye"] = {{"aspect_left", e[0]}, {"aspect_right", e[1]}, {"pupil_left", {e[2], e[3]}},
                        {"pupil_right", {e[4], e[5]}}};
          }
          if (m.control) j["control"] = control_to_json(*m.control);
        } else if constexpr (std::is_same_v<T, MotionFrameMsg>) {
          j["frame_index"] = m.frame_index;
          j["t_media_ms"] = m.t_media_ms;
          j["motion"] = m.motion;
          j["keypoints"] = m.keypoints;
        } else if constexpr (std::is_same_v<T, Stats>) {
          j["frames_emitted"] = m.frames_emitted;
          j["rtf"] = {{"extract", m.rtf[0]}, {"generate", m.rtf[1]}, {"render", m.rtf[2]}};
          if (m.ffd_ms) j["ffd_ms"] = *m.ffd_ms;
          if (m.e2e_rtf) j["e2e_rtf"] = *m.e2e_rtf;
          j["final"] = m.final;
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          j["code"] = m.code;
          j["message"] = m.message;
        } else if constexpr (std::is_same_v<T, SessionEnd>) {
          if (m.frames) j["frames"] = *m.frames;
        }
      },
      msg);
  return j;
}

inline std::string serialize(const Message& msg) { return to_json(msg).dump(); }

inline Message message_from_json(const json& j) {
  require(j.is_object(), ErrorKind::Protocol, "message must be a JSON object");
  require(j.contains("type") && j.at("type").is_string(), ErrorKind::Protocol, "message has no string 'type'");
  const auto type = j.at("type").get<std::string>();
  try {
    if (type == "session.start") {
      SessionStart m;
      m.session_id = j.value("session_id", std::string());
      const json c = j.value("config", json::object());
      auto& s = m.settings;
      s.steps = c.value("steps", s.steps);
      s.seed = c.value("seed", s.seed);
      if (c.contains("plan")) {
        const auto& p = c.at("plan");
        s.plan = {p.at("window").get<int>(), p.at("hop").get<int>(), p.at("first_window").get<int>()};
      }
      s.emotion = c.value("emotion", s.emotion);
      s.use_ckp = c.value("use_ckp", s.use_ckp);
      s.use_emotion = c.value("use_emotion", s.use_emotion);
      s.queue_capacity = c.value("queue_capacity", s.queue_capacity);
      if (c.contains("c_ref")) s.c_ref = c.at("c_ref").get<std::vector<double>>();
      if (c.contains("m_ref")) s.m_ref = c.at("m_ref").get<std::vector<double>>();
      if (c.contains("simulate_latency")) {
        const auto lat = c.at("simulate_latency").get<std::vector<std::array<double, 2>>>();
        require(lat.size() == streaming::kNumStages, ErrorKind::Protocol, "simulate_latency needs 3 [step_ms, valid_ms] pairs");
        streaming::LatencyProfile p;
        for (std::size_t i = 0; i < lat.size(); ++i) p[i] = {lat[i][0], lat[i][1]};
        s.simulate_latency = p;
      }
      return m;
    }
    if (type == "audio.chunk") {
      AudioChunk m;
      m.seq = j.value("seq", std::int64_t{0});
      m.sample_rate = j.value("sample_rate", 16000);
      m.pcm = decode_pcm(j.at("pcm").get<std::string>());
      return m;
    }
    if (type == "control.update") {
      ControlUpdate m;
      if (j.contains("effective_frame")) m.effective_frame = j.at("effective_frame").get<std::int64_t>();
      if (j.contains("emotion")) m.emotion = j.at("emotion").get<int>();
      if (j.contains("eye")) {
        const auto& e = j.at("eye");
        const auto pl = e.at("pupil_left").get<std::array<double, 2>>();
        const auto pr = e.at("pupil_right").get<std::array<double, 2>>();
        m.eye = conditioning::EyeState{e.at("aspect_left").get<double>(), e.at("aspect_right").get<double>(),
                                       {pl[0], pl[1]}, {pr[0], pr[1]}};
      }
      if (j.contains("control")) m.control = control_from_json(j.at("control"));
      return m;
    }
    if (type == "motion.frame") {
      MotionFrameMsg m;
      m.frame_index = j.at("frame_index").get<std::int64_t>();
      m.t_media_ms = j.at("t_media_ms").get<double>();
      m.motion = j.at("motion").get<std::vector<double>>();
      m.keypoints = j.at("keypoints").get<std::vector<std::array<double, 2>>>();
      return m;
    }
    if (type == "stats") {
      Stats m;
      m.frames_emitted = j.at("frames_emitted").get<std::int64_t>();
      const auto& r = j.at("rtf");
      m.rtf = {r.at("extract").get<double>(), r.at("generate").get<double>(), r.at("render").get<double>()};
      if (j.contains("ffd_ms")) m.ffd_ms = j.at("ffd_ms").get<double>();
      if (j.contains("e2e_rtf")) m.e2e_rtf = j.at("e2e_rtf").get<double>();
      m.final = j.value("final", false);
      return m;
    }
    if (type == "error") return ErrorMsg{j.at("code").get<std::string>(), j.at("message").get<std::string>()};
    if (type == "session.end") {
      SessionEnd m;
      if (j.contains("frames")) m.frames = j.at("frames").get<std::int64_t>();
      return m;
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Protocol, type + ": " + e.what());
  }
  fail(ErrorKind::Protocol, "unknown message type '" + type + "'");
}

inline Message parse_message(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Protocol, std::string("malformed JSON: ") + e.what());
  }
  return message_from_json(j);
}

inline ErrorMsg error_message(const Error& e) { return {std::string(to_string(e.kind())), e.what()}; }

inline MotionFrameMsg frame_message(const streaming::EmittedFrame& f, int fps) {
  MotionFrameMsg m;
  m.frame_index = f.frame_index;
  m.t_media_ms = 1000.0 * static_cast<double>(f.frame_index) / fps;
  m.motion.assign(f.motion.values.data(), f.motion.values.data() + f.motion.values.size());
  for (Eigen::Index k = 0; k < f.keypoints.rows(); ++k) m.keypoints.push_back({f.keypoints(k, 0), f.keypoints(k, 1)});
  return m;
}

}  // namespace streamhead::service
