#pragma once

// Checkpoint file: one line of JSON manifest, a newline, then a raw
// little-endian float32 blob (parameters, normalizer mean, normalizer scale).
// The manifest records the blob length and its FNV-1a hash.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/diffusion/model.hpp"
#include "streamhead/error.hpp"

namespace streamhead::diffusion {

inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline void put_f32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  char b[4];
  std::memcpy(b, &u, 4);
  out.append(b, 4);
}

inline float get_f32(const std::string& in, std::size_t offset) {
  std::uint32_t u;
  std::memcpy(&u, in.data() + offset, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const MotionModel& m) {
  std::string blob;
  const auto& p = m.net.params();
  blob.reserve(static_cast<std::size_t>(p.size() + 2 * motion::kMotionDims) * 4);
  for (Eigen::Index i = 0; i < p.size(); ++i) detail::put_f32(blob, p(i));
  for (Eigen::Index i = 0; i < motion::kMotionDims; ++i) detail::put_f32(blob, static_cast<float>(m.norm.mean(i)));
  for (Eigen::Index i = 0; i < motion::kMotionDims; ++i) detail::put_f32(blob, static_cast<float>(m.norm.scale(i)));

  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["arch"] = to_json(m.config());
  manifest["arch"]["T"] = m.schedule.T;
  manifest["arch"]["beta_start"] = m.schedule.beta_start;
  manifest["arch"]["beta_end"] = m.schedule.beta_end;
  manifest["dims"] = motion::kMotionDims;
  manifest["seed"] = m.seed;
  manifest["epoch"] = m.epoch;
  manifest["group_weights"] = {m.group_weights(0), m.group_weights(1), m.group_weights(2)};
  manifest["param_count"] = p.size();
  manifest["blob_bytes"] = blob.size();
  manifest["blob_fnv1a"] = hex64(fnv1a64(blob));
  return manifest.dump() + "\n" + blob;
}

inline MotionModel deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  require(nl != std::string::npos, ErrorKind::Format, "checkpoint has no manifest line");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint manifest: ") + e.what());
  }
  const std::string blob = bytes.substr(nl + 1);
  try {
    require(manifest.at("format_version").get<int>() == kCheckpointVersion, ErrorKind::Format,
            "unsupported checkpoint format_version");
    require(manifest.at("dims").get<int>() == motion::kMotionDims, ErrorKind::Format, "checkpoint dims != 265");
    require(manifest.at("blob_bytes").get<std::size_t>() == blob.size(), ErrorKind::Format,
            "checkpoint blob length " + std::to_string(blob.size()) + " does not match manifest");
    require(manifest.at("blob_fnv1a").get<std::string>() == hex64(fnv1a64(blob)), ErrorKind::Format,
            "checkpoint blob hash mismatch");
    const auto& arch = manifest.at("arch");
    MotionModel m(denoiser_config_from_json(arch));
    m.schedule = NoiseSchedule::linear(arch.at("T").get<int>(), arch.at("beta_start").get<double>(),
                                       arch.at("beta_end").get<double>());
    m.seed = manifest.at("seed").get<std::uint64_t>();
    m.epoch = manifest.at("epoch").get<int>();
    const auto w = manifest.at("group_weights").get<std::vector<double>>();
    require(w.size() == 3, ErrorKind::Format, "group_weights must have 3 entries");
    m.group_weights = GroupVector(w[0], w[1], w[2]);
    const auto count = manifest.at("param_count").get<Eigen::Index>();
    require(count == m.net.param_count(), ErrorKind::Format, "param_count does not match the architecture");
    require(blob.size() == static_cast<std::size_t>(count + 2 * motion::kMotionDims) * 4, ErrorKind::Format,
            "blob size does not match the architecture");
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < count; ++i, off += 4) m.net.params()(i) = detail::get_f32(blob, off);
    for (Eigen::Index i = 0; i < motion::kMotionDims; ++i, off += 4) m.norm.mean(i) = detail::get_f32(blob, off);
    for (Eigen::Index i = 0; i < motion::kMotionDims; ++i, off += 4) m.norm.scale(i) = detail::get_f32(blob, off);
    require(m.net.params().allFinite(), ErrorKind::Format, "checkpoint parameters are not finite");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint manifest: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const MotionModel& m) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::InvalidInput, "cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(m);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline MotionModel load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::InvalidInput, "checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace streamhead::diffusion
