#pragma once

// Motion sequence files: JSON Lines, one header record followed by one
// record per frame.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"

namespace streamhead::motion {

inline constexpr int kMotionFormatVersion = 1;

struct MotionFileHeader {
  int format_version = kMotionFormatVersion;
  double fps = 25.0;
  int keypoints = kNumKeypoints;
  int dims = kMotionDims;
  std::string layout_id{kLayoutId};
};

struct IndexedMotion {
  std::int64_t frame_index = 0;
  MotionVector values;
};

struct MotionSequence {
  MotionFileHeader header;
  std::vector<IndexedMotion> frames;
};

inline nlohmann::json header_to_json(const MotionFileHeader& h) {
  return {{"format_version", h.format_version}, {"fps", h.fps}, {"K", h.keypoints}, {"dims", h.dims},
          {"layout_id", h.layout_id}};
}

inline void write_motion_header(std::ostream& os, const MotionFileHeader& h) { os << header_to_json(h).dump() << '\n'; }

inline void write_motion_record(std::ostream& os, std::int64_t frame_index, const MotionVector& v) {
  nlohmann::json rec;
  rec["frame_index"] = frame_index;
  rec["values"] = std::vector<double>(v.values.data(), v.values.data() + kMotionDims);
  os << rec.dump() << '\n';
}

inline void write_motion_jsonl(std::ostream& os, const MotionSequence& seq) {
  write_motion_header(os, seq.header);
  for (const auto& f : seq.frames) write_motion_record(os, f.frame_index, f.values);
}

inline MotionFileHeader parse_motion_header(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Format, "motion header must be a JSON object");
  for (const char* key : {"format_version", "fps", "K", "dims", "layout_id"})
    require(j.contains(key), ErrorKind::Format, std::string("motion header missing '") + key + "'");
  MotionFileHeader h;
  h.format_version = j.at("format_version").get<int>();
  h.fps = j.at("fps").get<double>();
  h.keypoints = j.at("K").get<int>();
  h.dims = j.at("dims").get<int>();
  h.layout_id = j.at("layout_id").get<std::string>();
  require(h.format_version == kMotionFormatVersion, ErrorKind::Format,
          "unsupported motion format_version " + std::to_string(h.format_version));
  require(h.dims == kMotionDims, ErrorKind::Format, "motion file dims " + std::to_string(h.dims) + " != 265");
  require(h.layout_id == kLayoutId, ErrorKind::Format, "motion file layout_id '" + h.layout_id + "' not supported");
  require(h.keypoints == kNumKeypoints, ErrorKind::Format, "motion file K must be 21");
  require(h.fps > 0.0, ErrorKind::Format, "motion file fps must be positive");
  return h;
}

inline MotionSequence read_motion_jsonl(std::istream& is) {
  MotionSequence seq;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      seq.header = parse_motion_header(j);
      have_header = true;
      continue;
    }
    require(j.contains("frame_index") && j.contains("values"), ErrorKind::Format,
            "line " + std::to_string(line_no) + ": frame record needs frame_index and values");
    const auto values = j.at("values").get<std::vector<double>>();
    require(values.size() == static_cast<std::size_t>(kMotionDims), ErrorKind::Format,
            "line " + std::to_string(line_no) + ": expected 265 values");
    seq.frames.push_back({j.at("frame_index").get<std::int64_t>(), MotionVector::from(values)});
  }
  require(have_header, ErrorKind::Format, "motion file is missing its header record");
  return seq;
}

}  // namespace streamhead::motion
