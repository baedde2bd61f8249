#pragma once

// Config files: one flat JSON object per command with a published schema.
// Unknown keys and type mismatches are reported together in one error.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamhead/diffusion/trainer.hpp"
#include "streamhead/error.hpp"
#include "streamhead/streaming/pipeline.hpp"

namespace streamhead::service {

enum class ValueType { Integer, Number, Boolean, String, NumberList };

struct ConfigKey {
  std::string_view name;
  ValueType type;
  std::string_view description;
};

inline std::string_view type_name(ValueType t) {
  switch (t) {
    case ValueType::Integer: return "integer";
    case ValueType::Number: return "number";
    case ValueType::Boolean: return "boolean";
    case ValueType::String: return "string";
    case ValueType::NumberList: return "array of numbers";
  }
  return "?";
}

inline bool has_type(const nlohmann::json& v, ValueType t) {
  switch (t) {
    case ValueType::Integer: return v.is_number_integer();
    case ValueType::Number: return v.is_number();
    case ValueType::Boolean: return v.is_boolean();
    case ValueType::String: return v.is_string();
    case ValueType::NumberList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& x) { return x.is_number(); });
  }
  return false;
}

inline const std::vector<ConfigKey>& train_schema() {
  static const std::vector<ConfigKey> k = {
      {"seed", ValueType::Integer, "training seed (init, batching, noise)"},
      {"epochs", ValueType::Integer, "passes over the training split"},
      {"batch_size", ValueType::Integer, "clips per optimizer step"},
      {"optimizer", ValueType::String, "\"adam\" or \"sgd\""},
      {"learning_rate", ValueType::Number, "initial step size"},
      {"cosine_decay", ValueType::Boolean, "anneal the rate to zero over the run"},
      {"grad_clip", ValueType::Number, "global gradient norm limit, 0 disables"},
      {"flip_augmentation", ValueType::Boolean, "train on mirrored clips as well"},
      {"flip_probability", ValueType::Number, "chance a clip is mirrored in an epoch"},
      {"adaptive_weights", ValueType::Boolean, "adapt per-group loss weights each epoch"},
      {"weight_update_rate", ValueType::Number, "moving-average rate of the group losses"},
      {"validation_timesteps", ValueType::Integer, "diffusion steps probed by validation"},
      {"hidden", ValueType::Integer, "denoiser width"},
      {"blocks", ValueType::Integer, "denoiser attention blocks"},
      {"use_ckp", ValueType::Boolean, "condition on canonical keypoints"},
      {"use_emotion", ValueType::Boolean, "condition on the emotion label"},
      {"dataset_seed", ValueType::Integer, "seed of the synthetic dataset"},
      {"dataset_clips", ValueType::Integer, "number of synthetic clips"},
      {"dataset_frames", ValueType::Integer, "frames per clip"},
      {"dataset_dir", ValueType::String, "read clips from this directory instead of synthesizing"},
      {"validation_fraction", ValueType::Number, "held-out share of clips"},
  };
  return k;
}

inline const std::vector<ConfigKey>& serve_schema() {
  static const std::vector<ConfigKey> k = {
      {"bind", ValueType::String, "host:port to listen on"},
      {"max_sessions", ValueType::Integer, "concurrent session limit"},
      {"simulate_latency", ValueType::NumberList, "per-stage step times in ms; sessions sleep instead of computing"},
      {"log_level", ValueType::String, "trace, debug, info, warn, error"},
  };
  return k;
}

/// Throws a Config error naming every unknown or mistyped key.
inline void check_schema(const nlohmann::json& doc, const std::vector<ConfigKey>& schema, std::string_view what) {
  require(doc.is_object(), ErrorKind::Config, std::string(what) + " config must be a JSON object");
  std::vector<std::string> problems;
  for (const auto& [key, value] : doc.items()) {
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == schema.end()) problems.push_back("unknown key '" + key + "'");
    else if (!has_type(value, it->type))
      problems.push_back("key '" + key + "' must be " + std::string(type_name(it->type)));
  }
  if (problems.empty()) return;
  std::string msg = std::string(what) + " config invalid: ";
  for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
  fail(ErrorKind::Config, msg);
}

inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::InvalidInput, "cannot open config " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

inline std::string schema_markdown(const std::vector<ConfigKey>& schema) {
  std::string out = "| key | type | meaning |\n|---|---|---|\n";
  for (const auto& k : schema)
    out += "| `" + std::string(k.name) + "` | " + std::string(type_name(k.type)) + " | " + std::string(k.description) + " |\n";
  return out;
}

struct DatasetSpec {
  std::uint64_t seed = 2024;
  int clips = 200;
  int frames = 80;
  std::optional<std::string> dir;
  double validation_fraction = 0.2;
};

struct TrainJob {
  diffusion::TrainConfig train;
  DatasetSpec dataset;
};

inline TrainJob train_job_from_json(const nlohmann::json& doc) {
  check_schema(doc, train_schema(), "train");
  TrainJob job;
  auto& t = job.train;
  t.seed = doc.value("seed", t.seed);
  t.epochs = doc.value("epochs", t.epochs);
  t.batch_size = doc.value("batch_size", t.batch_size);
  if (doc.contains("optimizer")) {
    const auto o = doc.at("optimizer").get<std::string>();
    require(o == "adam" || o == "sgd", ErrorKind::Config, "optimizer must be \"adam\" or \"sgd\"");
    t.optimizer = o == "adam" ? diffusion::Optimizer::Adam : diffusion::Optimizer::Sgd;
  }
  t.learning_rate = doc.value("learning_rate", t.learning_rate);
  t.cosine_decay = doc.value("cosine_decay", t.cosine_decay);
  t.grad_clip = doc.value("grad_clip", t.grad_clip);
  t.flip_augmentation = doc.value("flip_augmentation", t.flip_augmentation);
  t.flip_probability = doc.value("flip_probability", t.flip_probability);
  t.adaptive_weights = doc.value("adaptive_weights", t.adaptive_weights);
  t.weight_update_rate = doc.value("weight_update_rate", t.weight_update_rate);
  t.validation_timesteps = doc.value("validation_timesteps", t.validation_timesteps);
  t.arch.hidden = doc.value("hidden", t.arch.hidden);
  t.arch.blocks = doc.value("blocks", t.arch.blocks);
  t.arch.use_ckp = doc.value("use_ckp", t.arch.use_ckp);
  t.arch.use_emotion = doc.value("use_emotion", t.arch.use_emotion);
  auto& d = job.dataset;
  d.seed = doc.value("dataset_seed", d.seed);
  d.clips = doc.value("dataset_clips", d.clips);
  d.frames = doc.value("dataset_frames", d.frames);
  if (doc.contains("dataset_dir")) d.dir = doc.at("dataset_dir").get<std::string>();
  d.validation_fraction = doc.value("validation_fraction", d.validation_fraction);
  t.validate();
  require(d.clips >= 2 && d.frames >= 3, ErrorKind::Config, "dataset needs >= 2 clips of >= 3 frames");
  require(d.validation_fraction > 0.0 && d.validation_fraction < 1.0, ErrorKind::Config,
          "validation_fraction must be in (0, 1)");
  return job;
}

struct ServeSettings {
  std::string bind = "127.0.0.1:8765";
  int max_sessions = 8;
  std::optional<streaming::LatencyProfile> simulate;
  std::string log_level = "info";
};

/// "a,b,c" or [a, b, c] step times in ms; valid lengths follow the
/// reference profile.
inline streaming::LatencyProfile latency_from_steps(const std::vector<double>& steps) {
  require(steps.size() == streaming::kNumStages, ErrorKind::Config, "simulated latency needs three step times");
  auto p = streaming::reference_latency();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    require(std::isfinite(steps[i]) && steps[i] >= 0.0, ErrorKind::Config, "step times must be >= 0");
    p[i].step_ms = steps[i];
  }
  return p;
}

inline streaming::LatencyProfile parse_latency_list(const std::string& text) {
  std::vector<double> v;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorKind::Config, "bad number");
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "simulated latency must look like 23,62,15");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return latency_from_steps(v);
}

inline ServeSettings serve_settings_from_json(const nlohmann::json& doc) {
  check_schema(doc, serve_schema(), "serve");
  ServeSettings s;
  s.bind = doc.value("bind", s.bind);
  s.max_sessions = doc.value("max_sessions", s.max_sessions);
  if (doc.contains("simulate_latency")) s.simulate = latency_from_steps(doc.at("simulate_latency").get<std::vector<double>>());
  s.log_level = doc.value("log_level", s.log_level);
  require(s.max_sessions >= 1, ErrorKind::Config, "max_sessions must be >= 1");
  return s;
}

}  // namespace streamhead::service
