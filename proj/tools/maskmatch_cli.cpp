// maskmatch: train, evaluate, ablate and sweep semi-supervised ViT runs.
//
// Exit codes: 0 success, 2 usage error, 3 runtime failure.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maskmatch/maskmatch.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace maskmatch;

#ifndef MASKMATCH_SOURCE_REVISION
#define MASKMATCH_SOURCE_REVISION "unknown"
#endif

namespace {

constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Config-file path plus one string slot per config field.
struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON config file or run manifest")->check(CLI::ExistingFile);
    for (const auto& f : config_fields()) {
      auto& slot = values[f.key];
      const std::string name = "--" + kebab(f.key);
      if (f.kind == FieldKind::boolean)
        options[f.key] = app.add_flag(name + "{true}", slot, f.help);
      else
        options[f.key] = app.add_option(name, slot, f.help);
    }
  }

  /// defaults < config file < explicit flags
  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg = load_config_file(config_file);
    for (const auto& f : config_fields())
      if (options.at(f.key)->count() > 0) apply_flag(cfg, f.key, values.at(f.key));
    cfg.dataset.seed = cfg.trainer.seed;
    return cfg;
  }
};

fs::path output_root() {
  if (const char* env = std::getenv("MASKMATCH_OUT"); env && *env) return env;
  return "runs";
}

fs::path default_out(const std::string& command) {
  std::string stamp = utc_timestamp();
  std::erase(stamp, ':');
  return output_root() / (command + "_" + stamp);
}

fs::path self_executable(const char* argv0) {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::path(argv0) : p;
}

/// Runs each job's `train` as a child process, at most `parallel` at a time.
void run_children(const fs::path& exe, const std::vector<std::pair<fs::path, fs::path>>& jobs, int parallel) {
  std::map<pid_t, fs::path> running;
  std::size_t next = 0;
  std::vector<std::string> failures;
  auto reap = [&] {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid <= 0) return;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failures.push_back(running[pid].string());
    running.erase(pid);
  };
  while (next < jobs.size() || !running.empty()) {
    while (next < jobs.size() && static_cast<int>(running.size()) < parallel) {
      const auto& [config, dir] = jobs[next++];
      std::vector<std::string> args = {exe.string(), "train", "--config", config.string(), "--out", dir.string()};
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      if (posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0)
        throw Error("failed to start child process for " + dir.string());
      running[pid] = dir;
    }
    reap();
  }
  if (!failures.empty()) throw Error("child run failed: " + failures.front());
}

std::vector<RunSummary> run_all(const std::vector<ExperimentRun>& runs, const fs::path& out, int parallel,
                                const fs::path& exe, const std::string& command) {
  if (parallel < 1) throw UsageError("--parallel must be >= 1");
  fs::create_directories(out);
  if (parallel == 1) {
    for (const auto& r : runs) {
      std::cerr << "[" << command << "] " << r.label << "\n";
      execute_run(r.config, out / r.slug, command + " " + r.slug, MASKMATCH_SOURCE_REVISION);
    }
  } else {
    std::vector<std::pair<fs::path, fs::path>> jobs;
    for (const auto& r : runs) {
      const auto cfg_path = out / (r.slug + ".config.json");
      write_json_file(cfg_path, config_to_json(r.config));
      jobs.emplace_back(cfg_path, out / r.slug);
    }
    run_children(exe, jobs, parallel);
  }
  std::vector<RunSummary> summaries;
  for (const auto& r : runs) summaries.push_back(read_summary(out / r.slug));
  return summaries;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised ViT training with threshold pseudo-labels, masked reconstruction and synthetic mixing"};
  app.require_subcommand(1);
  app.allow_extras(false);

  auto* train = app.add_subcommand("train", "train one configuration");
  ConfigOptions train_cfg;
  train_cfg.attach(*train);
  std::string train_out, resume;
  train->add_option("--out", train_out, "run directory (default: $MASKMATCH_OUT or ./runs)");
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test pool");
  ConfigOptions eval_cfg;
  eval_cfg.attach(*eval);
  std::string checkpoint, eval_out;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "directory for eval.json (default: the checkpoint's directory)");

  auto* ablate = app.add_subcommand("ablate", "run the ablation matrix");
  ConfigOptions ablate_cfg;
  ablate_cfg.attach(*ablate);
  std::string ablate_out;
  int ablate_parallel = 1;
  ablate->add_option("--out", ablate_out, "output directory");
  ablate->add_option("--parallel", ablate_parallel, "concurrent child processes");

  auto* sweep = app.add_subcommand("sweep", "sweep masking ratio or decoder depth");
  ConfigOptions sweep_cfg;
  sweep_cfg.attach(*sweep);
  std::string sweep_out, axis, values;
  int sweep_parallel = 1;
  sweep->add_option("--axis", axis, "mask-ratio or decoder-depth")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--parallel", sweep_parallel, "concurrent child processes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  const fs::path exe = self_executable(argv[0]);
  try {
    if (*train) {
      const RunConfig cfg = train_cfg.resolve();
      const fs::path out = train_out.empty() ? default_out("train") : fs::path(train_out);
      const auto s = execute_run(cfg, out, "train", MASKMATCH_SOURCE_REVISION, resume);
      std::cout << "run directory: " << out.string() << "\n";
      if (s.final_error) std::cout << "final error rate: " << fmt(*s.final_error) << "\n";
      if (s.diagnostic.contains("lambda_mae_below_ratio") && !s.diagnostic["lambda_mae_below_ratio"].get<bool>())
        std::cerr << "warning: lambda_mae is not below (L_s + lambda_u L_u) / L_mae = "
                  << s.diagnostic["coefficient_ratio"].get<double>() << "\n";
      return 0;
    }
    if (*eval) {
      RunConfig cfg;
      const fs::path ckpt = checkpoint;
      if (eval_cfg.config_file.empty()) {
        // fall back to the manifest of the run that produced the checkpoint
        for (const auto& dir : {ckpt.parent_path(), ckpt.parent_path().parent_path()})
          if (fs::exists(dir / "manifest.json")) {
            eval_cfg.config_file = (dir / "manifest.json").string();
            break;
          }
      }
      cfg = eval_cfg.resolve();
      const auto pools = load_dataset(cfg.dataset);
      bind_to_data(cfg, pools);
      const auto state = load_checkpoint<float>(ckpt, &cfg.trainer.model);
      const double err = evaluate(state.model, pools.test);
      const fs::path out = eval_out.empty() ? ckpt.parent_path() : fs::path(eval_out);
      write_json_file(out / "eval.json", {{"checkpoint", ckpt.string()},
                                          {"iteration", state.iteration},
                                          {"test_size", pools.test.size()},
                                          {"error_rate", err}});
      std::cout << "error rate: " << fmt(err) << "\n";
      return 0;
    }
    if (*ablate) {
      const RunConfig base = ablate_cfg.resolve();
      const fs::path out = ablate_out.empty() ? default_out("ablate") : fs::path(ablate_out);
      const auto runs = ablation_matrix(base);
      const auto summaries = run_all(runs, out, ablate_parallel, exe, "ablate");
      std::ofstream csv(out / "ablation.csv");
      csv << "configuration,slug,final_error_rate,mean_util_actual,mean_util_theoretical\n";
      for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& s = summaries[i];
        csv << csv_field(runs[i].label) << ',' << runs[i].slug << ',' << (s.final_error ? fmt(*s.final_error) : "")
            << ',' << fmt(s.mean_util_actual) << ',' << fmt(s.mean_util_theoretical) << '\n';
        std::cout << runs[i].label << ": " << (s.final_error ? fmt(*s.final_error) : "n/a") << "\n";
      }
      return 0;
    }
    if (*sweep) {
      const RunConfig base = sweep_cfg.resolve();
      const auto ax = parse_sweep_axis(axis);
      const fs::path out = sweep_out.empty() ? default_out("sweep") : fs::path(sweep_out);
      const auto runs = sweep_runs(base, ax, split_list(values));
      const auto summaries = run_all(runs, out, sweep_parallel, exe, "sweep");
      std::ofstream csv(out / "sweep.csv");
      csv << to_string(ax) << ",final_error_rate\n";
      for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& s = summaries[i];
        csv << runs[i].label << ',' << (s.final_error ? fmt(*s.final_error) : "") << '\n';
        std::cout << to_string(ax) << "=" << runs[i].label << ": " << (s.final_error ? fmt(*s.final_error) : "n/a")
                  << "\n";
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
