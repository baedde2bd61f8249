// streamhead: train, generate, serve, bench and probe from the command line.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "streamhead/conditioning/dataset_io.hpp"
#include "streamhead/diffusion/checkpoint.hpp"
#include "streamhead/diffusion/trainer.hpp"
#include "streamhead/motion/motion_io.hpp"
#include "streamhead/service/config.hpp"
#include "streamhead/service/offline.hpp"
#include "streamhead/service/server.hpp"

namespace sh = streamhead;
namespace svc = streamhead::service;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  sh::require(static_cast<bool>(os), sh::ErrorKind::InvalidInput, "cannot write " + path);
  return os;
}

std::shared_ptr<const sh::diffusion::MotionModel> load_model(const std::string& path) {
  sh::require(std::filesystem::exists(path), sh::ErrorKind::InvalidInput, "checkpoint not found: " + path);
  auto m = std::make_shared<sh::diffusion::MotionModel>(sh::diffusion::load_checkpoint(path));
  spdlog::info("loaded checkpoint {} (epoch {}, {} parameters)", path, m->epoch, m->net.param_count());
  return m;
}

std::vector<double> load_audio(const std::string& path) {
  auto wav = svc::read_wav(path);
  const int rate = sh::streaming::ExtractorConfig{}.sample_rate;
  sh::require(wav.sample_rate == rate, sh::ErrorKind::Config,
              path + ": expected " + std::to_string(rate) + " Hz audio, got " + std::to_string(wav.sample_rate));
  spdlog::info("read {} ({:.2f} s)", path, static_cast<double>(wav.samples.size()) / rate);
  return std::move(wav.samples);
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, log;
};

int run_train(const TrainArgs& a) {
  const json doc = a.config.empty() ? json::object() : svc::read_config_file(a.config);
  const auto job = svc::train_job_from_json(doc);
  std::vector<sh::conditioning::SyntheticClip> clips;
  if (job.dataset.dir) {
    clips = sh::conditioning::read_dataset(*job.dataset.dir);
    spdlog::info("read {} clips from {}", clips.size(), *job.dataset.dir);
  } else {
    clips = sh::conditioning::synth_dataset(job.dataset.seed, job.dataset.clips, job.dataset.frames);
    spdlog::info("synthesized {} clips of {} frames (seed {})", clips.size(), job.dataset.frames, job.dataset.seed);
  }
  const auto split = sh::conditioning::split_dataset(job.dataset.seed, static_cast<int>(clips.size()),
                                                     job.dataset.validation_fraction);
  const std::string log_path = a.log.empty() ? a.out + ".metrics.jsonl" : a.log;
  auto log = open_out(log_path);
  sh::diffusion::Trainer trainer(job.train, clips, split);
  const auto result = trainer.run([&](const sh::diffusion::EpochMetrics& m) {
    log << sh::diffusion::to_json(m).dump() << '\n' << std::flush;
    spdlog::info("epoch {:3d}  loss {:.4f}  val {:.4f}  ({:.1f} s)", m.epoch, m.train_loss, m.val_grouped_mse, m.seconds);
  });
  sh::diffusion::save_checkpoint(a.out, result.model);
  spdlog::info("held-out grouped mse {:.4f} (untrained {:.4f}); checkpoint {}, metrics {}",
               result.final_validation.grouped, result.baseline.grouped, a.out, log_path);
  return 0;
}

// --- generate -----------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt, audio, identity, out;
  int steps = 50;
  std::uint64_t seed = 0;
  bool online = false;
};

int run_generate(const GenerateArgs& a) {
  auto model = load_model(a.ckpt);
  svc::SessionSettings s;
  s.steps = a.steps;
  s.seed = a.seed;
  s.plan = a.online ? sh::streaming::SegmentPlan::online() : sh::streaming::SegmentPlan::offline();
  if (!a.identity.empty()) svc::apply_identity(svc::read_config_file(a.identity), s);
  const auto result = svc::generate_from_audio(model, load_audio(a.audio), s);
  auto os = open_out(a.out);
  sh::motion::write_motion_header(os, sh::motion::MotionFileHeader{});
  for (const auto& f : result.frames) sh::motion::write_motion_record(os, f.frame_index, f.motion);
  spdlog::info("wrote {} frames to {}", result.frames.size(), a.out);
  return 0;
}

// --- serve --------------------------------------------------------------------

struct ServeArgs {
  std::string ckpt, bind, config, simulate;
  int max_sessions = 0;
  bool log_level_given = false;
};

int run_serve(const ServeArgs& a) {
  svc::ServeSettings settings =
      a.config.empty() ? svc::ServeSettings{} : svc::serve_settings_from_json(svc::read_config_file(a.config));
  if (!a.bind.empty()) settings.bind = a.bind;
  if (!a.simulate.empty()) settings.simulate = svc::parse_latency_list(a.simulate);
  if (a.max_sessions > 0) settings.max_sessions = a.max_sessions;
  if (!a.log_level_given) spdlog::set_level(spdlog::level::from_str(settings.log_level));
  std::shared_ptr<const sh::diffusion::MotionModel> model;
  if (!a.ckpt.empty()) model = load_model(a.ckpt);
  sh::require(model || settings.simulate, sh::ErrorKind::Config, "serve needs --ckpt unless --simulate-latency is given");
  const auto [host, port] = svc::parse_bind(settings.bind);
  svc::Server server(model, svc::ServerConfig{host, port, settings.max_sessions, settings.simulate});
  const unsigned short bound = server.start();
  spdlog::info("listening on ws://{}:{} (max {} sessions{})", host, bound, settings.max_sessions,
               settings.simulate ? ", simulated latency" : "");
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  spdlog::info("shutting down");
  server.stop();
  return 0;
}

// --- bench --------------------------------------------------------------------

struct BenchArgs {
  std::string simulate, ckpt, audio, log;
  double seconds = 10.0;
  int steps = 10;
  bool paced = false;
};

int run_bench(const BenchArgs& a) {
  sh::streaming::PipelineTimings timings("bench");
  svc::BenchReport report;
  if (!a.simulate.empty()) {
    const auto profile =
        a.simulate == "reference" || a.simulate == "table3" ? sh::streaming::reference_latency() : svc::parse_latency_list(a.simulate);
    report = svc::bench_simulated(profile, a.seconds, a.paced, timings);
  } else {
    sh::require(!a.ckpt.empty() && !a.audio.empty(), sh::ErrorKind::Config,
                "bench needs --simulate, or --ckpt with --audio");
    svc::SessionSettings s;
    s.steps = a.steps;
    report = svc::bench_model(load_model(a.ckpt), load_audio(a.audio), s, timings);
  }
  if (!a.log.empty()) {
    auto os = open_out(a.log);
    timings.write_jsonl(os);
    spdlog::info("timing log written to {}", a.log);
  }
  std::cout << svc::bench_table(report);
  return 0;
}

// --- probe-dim ----------------------------------------------------------------

struct ProbeArgs {
  int dim = 45;
  double eps = 0.05;
  std::string identity, out;
};

int run_probe(const ProbeArgs& a) {
  sh::motion::CanonicalKeypoints c_ref = sh::motion::template_keypoints();
  if (!a.identity.empty()) {
    svc::SessionSettings s;
    svc::apply_identity(svc::read_config_file(a.identity), s);
    if (s.c_ref) {
      sh::require(s.c_ref->size() == sh::motion::kDeltaDims, sh::ErrorKind::Config, "c_ref needs 63 values");
      std::copy(s.c_ref->begin(), s.c_ref->end(), c_ref.points.data());
    }
  }
  const auto snaps = svc::probe_dim(a.dim, a.eps, c_ref);
  json doc = {{"dim", a.dim}, {"keypoint", a.dim / 3}, {"axis", std::string(1, "xyz"[a.dim % 3])}};
  for (const auto& s : snaps) doc["snapshots"].push_back(svc::to_json(s));
  for (std::size_t i : {std::size_t{0}, std::size_t{2}}) {
    const auto moved = svc::changed_coordinates(snaps[1].implicit, snaps[i].implicit);
    for (const auto& c : moved)
      std::cout << "offset " << snaps[i].offset << ": keypoint " << c.keypoint << " (" << sh::motion::kKeypointNames[static_cast<std::size_t>(c.keypoint)]
                << ") " << "xyz"[c.axis] << " moved by " << c.delta << '\n';
    doc["moved"].push_back({{"offset", snaps[i].offset}, {"count", moved.size()}});
  }
  if (!a.out.empty()) {
    open_out(a.out) << doc.dump(2) << '\n';
    spdlog::info("snapshots written to {}", a.out);
  }
  return 0;
}

// --- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 2024;
  int clips = 200, frames = 80;
};

int run_synth(const SynthArgs& a) {
  const auto clips = sh::conditioning::synth_dataset(a.seed, a.clips, a.frames);
  sh::conditioning::DatasetManifest manifest;
  manifest.seed = a.seed;
  manifest.n_clips = a.clips;
  manifest.L = a.frames;
  sh::conditioning::write_dataset(a.out, manifest, clips);
  spdlog::info("wrote {} clips to {}", a.clips, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamhead: audio-driven head motion generation and streaming"};
  app.require_subcommand(1);
  std::string log_level = "info";
  auto* log_opt = app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->envname("STREAMHEAD_LOG_LEVEL");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a model and write a checkpoint");
  c_train->add_option("--config", train.config, "JSON training config (see config-schema)")->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "checkpoint path")->required();
  c_train->add_option("--log", train.log, "metrics JSONL path (default: <out>.metrics.jsonl)");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "generate motion for a WAV file");
  c_gen->add_option("--ckpt", gen.ckpt, "checkpoint")->required();
  c_gen->add_option("--audio", gen.audio, "16 kHz 16-bit WAV")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--identity", gen.identity, "identity JSON {c_ref, m_ref, emotion}")->check(CLI::ExistingFile);
  c_gen->add_option("--steps", gen.steps, "sampling steps")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "noise seed")->capture_default_str();
  c_gen->add_option("--out", gen.out, "motion JSONL output")->required();
  c_gen->add_flag("--online", gen.online, "use the online segment plan instead of the offline one");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "run the websocket session service");
  c_serve->add_option("--ckpt", serve.ckpt, "checkpoint (optional with --simulate-latency)");
  c_serve->add_option("--bind", serve.bind, "host:port")->envname("STREAMHEAD_BIND");
  c_serve->add_option("--config", serve.config, "JSON serve config")->check(CLI::ExistingFile);
  c_serve->add_option("--simulate-latency", serve.simulate, "per-stage step ms a,b,c; stages sleep instead of computing");
  c_serve->add_option("--max-sessions", serve.max_sessions, "concurrent session limit");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "measure per-stage RTF and first-frame delay");
  c_bench->add_option("--simulate", bench.simulate, "\"reference\" or per-stage step ms a,b,c");
  c_bench->add_option("--ckpt", bench.ckpt, "checkpoint for a real run");
  c_bench->add_option("--audio", bench.audio, "WAV for a real run")->check(CLI::ExistingFile);
  c_bench->add_option("--seconds", bench.seconds, "simulated media duration")->capture_default_str();
  c_bench->add_option("--steps", bench.steps, "sampling steps for a real run")->capture_default_str();
  c_bench->add_flag("--paced", bench.paced, "release audio at media rate");
  c_bench->add_option("--log", bench.log, "timing-log JSONL output");

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe-dim", "offset one deformation dimension and report which keypoints move");
  c_probe->add_option("--dim", probe.dim, "deformation dimension 0..62")->capture_default_str();
  c_probe->add_option("--eps", probe.eps, "offset magnitude")->capture_default_str();
  c_probe->add_option("--identity", probe.identity, "identity JSON with c_ref")->check(CLI::ExistingFile);
  c_probe->add_option("--out", probe.out, "snapshot JSON output");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic dataset");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--clips", synth.clips)->capture_default_str();
  c_synth->add_option("--frames", synth.frames)->capture_default_str();

  std::string schema_of = "train";
  auto* c_schema = app.add_subcommand("config-schema", "print the config file schema");
  c_schema->add_option("kind", schema_of, "train or serve")->check(CLI::IsMember({"train", "serve"}));

  CLI11_PARSE(app, argc, argv);
  try {
    const auto level = spdlog::level::from_str(log_level);
    sh::require(level != spdlog::level::off || log_level == "off", sh::ErrorKind::Config,
                "unknown log level '" + log_level + "'");
    spdlog::set_level(level);
    spdlog::set_default_logger(spdlog::stderr_color_mt("streamhead"));
    spdlog::set_level(level);
    if (*c_train) return run_train(train);
    if (*c_gen) return run_generate(gen);
    serve.log_level_given = log_opt->count() > 0;
    if (*c_serve) return run_serve(serve);
    if (*c_bench) return run_bench(bench);
    if (*c_probe) return run_probe(probe);
    if (*c_synth) return run_synth(synth);
    if (*c_schema) {
      std::cout << svc::schema_markdown(schema_of == "train" ? svc::train_schema() : svc::serve_schema());
      return 0;
    }
  } catch (const sh::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
