#pragma once

// One training run with its on-disk artifacts:
//   <dir>/manifest.json    resolved configuration, seed, paths, revision
//   <dir>/metrics.jsonl    one record per iteration
//   <dir>/checkpoints/     periodic ckpt_<iter>.mmck and final.mmck
//   <dir>/summary.json     final error, mean utilization, loss-ratio diagnostic

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"

#include "maskmatch/config.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/trainer.hpp"

namespace maskmatch {

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path manifest;
  std::filesystem::path metrics;
  std::filesystem::path checkpoints;
  std::filesystem::path summary;

  explicit RunArtifacts(const std::filesystem::path& root)
      : dir(root),
        manifest(root / "manifest.json"),
        metrics(root / "metrics.jsonl"),
        checkpoints(root / "checkpoints"),
        summary(root / "summary.json") {}

  std::filesystem::path final_checkpoint() const { return checkpoints / "final.mmck"; }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline nlohmann::json make_manifest(const RunConfig& cfg, const RunArtifacts& a, const std::string& command,
                                    const std::string& revision) {
  return {{"command", command},
          {"config", config_to_json(cfg)},
          {"model", model_config_to_json(cfg.trainer.model)},
          {"seed", cfg.trainer.seed},
          {"artifacts",
           {{"metrics", a.metrics.string()},
            {"checkpoints", a.checkpoints.string()},
            {"final_checkpoint", a.final_checkpoint().string()},
            {"summary", a.summary.string()}}},
          {"started_at", utc_timestamp()},
          {"source_revision", revision}};
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

struct RunSummary {
  std::optional<double> final_error;
  double mean_util_actual = 0.0;
  double mean_util_theoretical = 0.0;
  double mean_pass_rate = 0.0;
  std::int64_t iterations = 0;
  nlohmann::json diagnostic = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j = {{"iterations", iterations},
                        {"mean_util_actual", mean_util_actual},
                        {"mean_util_theoretical", mean_util_theoretical},
                        {"mean_pass_rate", mean_pass_rate},
                        {"diagnostic", diagnostic}};
    j["final_error_rate"] = final_error ? nlohmann::json(*final_error) : nlohmann::json(nullptr);
    return j;
  }

  static RunSummary from_json(const nlohmann::json& j) {
    RunSummary s;
    if (!j.at("final_error_rate").is_null()) s.final_error = j.at("final_error_rate").get<double>();
    s.mean_util_actual = j.at("mean_util_actual");
    s.mean_util_theoretical = j.at("mean_util_theoretical");
    s.mean_pass_rate = j.at("mean_pass_rate");
    s.iterations = j.at("iterations");
    s.diagnostic = j.value("diagnostic", nlohmann::json::object());
    return s;
  }
};

inline RunSummary summarize(const std::vector<MetricsRecord>& records) {
  RunSummary s;
  for (const auto& r : records) {
    s.mean_util_actual += r.util_actual;
    s.mean_util_theoretical += r.util_theoretical;
    s.mean_pass_rate += r.pass_rate;
    if (r.error_rate) s.final_error = r.error_rate;
  }
  s.iterations = static_cast<std::int64_t>(records.size());
  if (!records.empty()) {
    const double n = static_cast<double>(records.size());
    s.mean_util_actual /= n;
    s.mean_util_theoretical /= n;
    s.mean_pass_rate /= n;
  }
  return s;
}

inline RunSummary read_summary(const std::filesystem::path& dir) {
  return RunSummary::from_json(read_json_file(RunArtifacts(dir).summary));
}

/// Loads the data, binds the model to it, trains and writes all artifacts.
/// Summary statistics cover the whole metrics log, including records written
/// before a resume.
inline RunSummary execute_run(RunConfig cfg, const std::filesystem::path& dir, const std::string& command,
                              const std::string& revision, const std::filesystem::path& resume = {},
                              std::optional<std::int64_t> stop_after = std::nullopt) {
  cfg.dataset.seed = cfg.trainer.seed;
  const auto pools = load_dataset(cfg.dataset);
  bind_to_data(cfg, pools);
  cfg.trainer.validate();
  const RunArtifacts a(dir);
  std::filesystem::create_directories(a.dir);
  write_json_file(a.manifest, make_manifest(cfg, a, command, revision));
  RunPaths paths{a.metrics, a.checkpoints, resume, stop_after};
  const auto result = run_training(cfg.trainer, pools, paths);
  auto summary = summarize(read_metrics(a.metrics));
  summary.diagnostic = diagnostic_json(result.diagnostic, cfg.trainer.step);
  write_json_file(a.summary, summary.to_json());
  return summary;
}

}  // namespace maskmatch
