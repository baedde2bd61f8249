#pragma once

// On-disk dataset: manifest.json plus, per clip, a motion JSONL file
// (targets) and a features JSONL file (conditions).

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/conditioning/synth.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion_io.hpp"

namespace streamhead::conditioning {

struct DatasetManifest {
  std::uint64_t seed = 0;
  int n_clips = 0;
  int L = 80;
  double fps = 25.0;
  int F = kDefaultFeatureWidth;
};

inline std::string clip_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d", index);
  return buf;
}

inline void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                          const std::vector<SyntheticClip>& clips) {
  require(static_cast<int>(clips.size()) == manifest.n_clips, ErrorKind::InvalidInput,
          "manifest n_clips does not match clip count");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    require(static_cast<bool>(os), ErrorKind::InvalidInput, "cannot write " + (dir / "manifest.json").string());
    os << nlohmann::json{{"seed", manifest.seed}, {"n_clips", manifest.n_clips}, {"L", manifest.L},
                         {"fps", manifest.fps}, {"F", manifest.F}}
              .dump(2)
       << '\n';
  }
  for (int i = 0; i < manifest.n_clips; ++i) {
    const auto& clip = clips[static_cast<std::size_t>(i)];
    const auto stem = clip_stem(i);
    std::ofstream motion_os(dir / (stem + ".motion.jsonl"));
    motion::MotionFileHeader header;
    header.fps = manifest.fps;
    motion::write_motion_header(motion_os, header);
    for (Eigen::Index r = 0; r < clip.target.rows(); ++r)
      motion::write_motion_record(motion_os, r, motion::MotionVector::from(clip.target.row(r)));

    std::ofstream feat_os(dir / (stem + ".features.jsonl"));
    const auto& b = clip.bundle;
    nlohmann::json head;
    head["clip"] = i;
    head["seed"] = clip.seed;
    head["identity"] = clip.identity;
    head["emotion"] = b.emotion.index;
    head["F"] = b.audio.width();
    head["fps"] = manifest.fps;
    head["c_ref"] = std::vector<double>(b.c_ref.points.data(), b.c_ref.points.data() + motion::kDeltaDims);
    head["m_ref"] = std::vector<double>(b.m_ref.values.data(), b.m_ref.values.data() + motion::kMotionDims);
    feat_os << head.dump() << '\n';
    for (Eigen::Index r = 0; r < b.frames(); ++r) {
      nlohmann::json rec;
      rec["frame_index"] = r;
      std::vector<double> a(static_cast<std::size_t>(b.audio.width()));
      for (Eigen::Index c = 0; c < b.audio.width(); ++c) a[static_cast<std::size_t>(c)] = b.audio.features(r, c);
      rec["audio"] = a;
      const auto eye = b.eyes[static_cast<std::size_t>(r)].flatten();
      rec["eye"] = std::vector<double>(eye.begin(), eye.end());
      rec["envelope"] = clip.envelope[static_cast<std::size_t>(r)];
      feat_os << rec.dump() << '\n';
    }
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  require(static_cast<bool>(is), ErrorKind::InvalidInput, "cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("dataset manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_clips = j.at("n_clips").get<int>();
    m.L = j.at("L").get<int>();
    m.fps = j.at("fps").get<double>();
    m.F = j.at("F").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("dataset manifest: ") + e.what());
  }
  return m;
}

inline std::vector<SyntheticClip> read_dataset(const std::filesystem::path& dir) {
  const DatasetManifest manifest = read_manifest(dir);
  std::vector<SyntheticClip> clips;
  for (int i = 0; i < manifest.n_clips; ++i) {
    const auto stem = clip_stem(i);
    SyntheticClip clip;
    std::ifstream motion_is(dir / (stem + ".motion.jsonl"));
    require(static_cast<bool>(motion_is), ErrorKind::InvalidInput, "missing " + stem + ".motion.jsonl");
    const auto seq = motion::read_motion_jsonl(motion_is);
    require(static_cast<int>(seq.frames.size()) == manifest.L, ErrorKind::Format, stem + ": wrong frame count");
    clip.target = Matrix(manifest.L, motion::kMotionDims);
    for (int r = 0; r < manifest.L; ++r) clip.target.row(r) = seq.frames[static_cast<std::size_t>(r)].values.values.transpose();

    std::ifstream feat_is(dir / (stem + ".features.jsonl"));
    require(static_cast<bool>(feat_is), ErrorKind::InvalidInput, "missing " + stem + ".features.jsonl");
    std::string line;
    require(static_cast<bool>(std::getline(feat_is, line)), ErrorKind::Format, stem + ": empty features file");
    try {
      const auto head = nlohmann::json::parse(line);
      clip.seed = head.at("seed").get<std::uint64_t>();
      clip.identity = head.at("identity").get<int>();
      auto& b = clip.bundle;
      b.emotion.index = head.at("emotion").get<int>();
      const auto c = head.at("c_ref").get<std::vector<double>>();
      require(c.size() == static_cast<std::size_t>(motion::kDeltaDims), ErrorKind::Format, stem + ": c_ref size");
      std::copy(c.begin(), c.end(), b.c_ref.points.data());
      b.m_ref = motion::MotionVector::from(head.at("m_ref").get<std::vector<double>>());
      b.audio.features = Matrix(manifest.L, manifest.F);
      for (int r = 0; r < manifest.L; ++r) {
        require(static_cast<bool>(std::getline(feat_is, line)), ErrorKind::Format, stem + ": truncated features");
        const auto rec = nlohmann::json::parse(line);
        const auto a = rec.at("audio").get<std::vector<double>>();
        require(a.size() == static_cast<std::size_t>(manifest.F), ErrorKind::Format, stem + ": feature width");
        for (int k = 0; k < manifest.F; ++k) b.audio.features(r, k) = a[static_cast<std::size_t>(k)];
        const auto e = rec.at("eye").get<std::vector<double>>();
        require(e.size() == static_cast<std::size_t>(kEyeStateWidth), ErrorKind::Format, stem + ": eye width");
        b.eyes.push_back(EyeState{e[0], e[1], {e[2], e[3]}, {e[4], e[5]}});
        clip.envelope.push_back(rec.value("envelope", 0.0));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, stem + ": " + e.what());
    }
    clip.bundle.validate();
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace streamhead::conditioning
