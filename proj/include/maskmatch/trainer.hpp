#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmatch/checkpoint.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/optim.hpp"
#include "maskmatch/step.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

struct TrainerConfig {
  std::int64_t total_iterations = 3000;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t batch_labeled = 8;
  std::size_t batch_unlabeled = 32;
  ModelConfig model{};
  StepConfig step{};
  OptimizerConfig optimizer{};
  ThresholdMode threshold_mode = ThresholdMode::maskmatch;
  double threshold_momentum = 0.999;
  double fixed_threshold = 0.95;
  std::uint64_t seed = 0;

  void validate() const {
    if (total_iterations < 0) throw ConfigError("total_iterations must be >= 0");
    if (eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (batch_labeled == 0 || batch_unlabeled == 0) throw ConfigError("batch sizes must be positive");
    model.validate();
    step.validate();
    optimizer.validate();
    init_state(model.num_classes, threshold_mode, threshold_momentum, fixed_threshold);
  }
};

/// One line of the metrics log.
struct MetricsRecord {
  std::int64_t iter = 0;
  LossBundle losses;
  double tau_global = 0.0;
  double pass_rate = 0.0;
  double util_actual = 0.0;
  double util_theoretical = 0.0;
  std::optional<double> error_rate;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"iter", iter},
                        {"loss_s", losses.loss_s},
                        {"loss_u", losses.loss_u},
                        {"loss_mae", losses.loss_mae},
                        {"loss_sdt", losses.loss_sdt},
                        {"loss_total", losses.total},
                        {"tau_global", tau_global},
                        {"pass_rate", pass_rate},
                        {"util_actual", util_actual},
                        {"util_theoretical", util_theoretical}};
    if (error_rate) j["error_rate"] = *error_rate;
    j["wall_ms"] = wall_ms;
    return j;
  }

  static MetricsRecord from_json(const nlohmann::json& j) {
    MetricsRecord r;
    r.iter = j.at("iter");
    r.losses.loss_s = j.at("loss_s");
    r.losses.loss_u = j.at("loss_u");
    r.losses.loss_mae = j.at("loss_mae");
    r.losses.loss_sdt = j.at("loss_sdt");
    r.losses.total = j.at("loss_total");
    r.tau_global = j.at("tau_global");
    r.pass_rate = j.at("pass_rate");
    r.util_actual = j.at("util_actual");
    r.util_theoretical = j.at("util_theoretical");
    if (j.contains("error_rate")) r.error_rate = j.at("error_rate").get<double>();
    r.wall_ms = j.value("wall_ms", 0.0);
    return r;
  }

  /// Equality of everything except wall-clock time.
  bool same_values(const MetricsRecord& o) const {
    auto bits = [](double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; };
    return iter == o.iter && bits(losses.loss_s, o.losses.loss_s) && bits(losses.loss_u, o.losses.loss_u) &&
           bits(losses.loss_mae, o.losses.loss_mae) && bits(losses.loss_sdt, o.losses.loss_sdt) &&
           bits(losses.total, o.losses.total) && bits(tau_global, o.tau_global) && bits(pass_rate, o.pass_rate) &&
           bits(util_actual, o.util_actual) && bits(util_theoretical, o.util_theoretical) &&
           error_rate.has_value() == o.error_rate.has_value() && (!error_rate || bits(*error_rate, *o.error_rate));
  }
};

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("cannot open metrics log '" + path.string() + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("error")) continue;
    out.push_back(MetricsRecord::from_json(j));
  }
  return out;
}

/// 1 - (top-1 correct) / N; ties go to the lowest class index.
inline double error_rate(std::span<const ProbVector> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw PreconditionError("test pool is empty");
  if (predictions.size() != labels.size()) throw ShapeError("one label per prediction required");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (static_cast<int>(argmax(predictions[i])) == labels[i]) ++correct;
  return 1.0 - static_cast<double>(correct) / static_cast<double>(predictions.size());
}

/// Error rate on raw (unaugmented) test images.
template <class T>
double evaluate(const VitModel<T>& m, const Pool& test) {
  if (test.size() == 0) throw PreconditionError("test pool is empty");
  std::vector<ProbVector> preds;
  preds.reserve(test.size());
  for (const auto& img : test.images) preds.push_back(classify(m, img));
  return error_rate(std::span<const ProbVector>(preds), std::span<const int>(test.labels));
}

struct RunPaths {
  std::filesystem::path metrics;          // empty: keep records in memory only
  std::filesystem::path checkpoint_dir;   // empty: no checkpoints
  std::filesystem::path resume_from;      // empty: fresh start
  /// Stop after this many completed iterations (simulates an interruption);
  /// the schedule still follows total_iterations.
  std::optional<std::int64_t> stop_after;
};

/// Running means of the loss terms for the coefficient sanity check: the
/// reconstruction weight should stay below (L_s + lambda_u L_u) / L_mae.
struct CoefficientDiagnostic {
  double mean_s = 0.0;
  double mean_u = 0.0;
  double mean_mae = 0.0;
  std::int64_t count = 0;

  void add(const LossBundle& b) {
    ++count;
    const double k = 1.0 / static_cast<double>(count);
    mean_s += (b.loss_s - mean_s) * k;
    mean_u += (b.loss_u - mean_u) * k;
    mean_mae += (b.loss_mae - mean_mae) * k;
  }
  std::optional<double> ratio(double lambda_u) const {
    if (count == 0 || mean_mae <= 0.0) return std::nullopt;
    return (mean_s + lambda_u * mean_u) / mean_mae;
  }
  bool violated(double lambda_u, double lambda_mae) const {
    const auto r = ratio(lambda_u);
    return r && !(lambda_mae < *r);
  }
};

struct TrainingResult {
  TrainingState<float> state;
  std::vector<MetricsRecord> records;
  std::optional<double> final_error;
  CoefficientDiagnostic diagnostic;
};

inline nlohmann::json diagnostic_json(const CoefficientDiagnostic& d, const StepConfig& s) {
  nlohmann::json j = {{"mean_loss_s", d.mean_s}, {"mean_loss_u", d.mean_u}, {"mean_loss_mae", d.mean_mae}};
  if (const auto r = d.ratio(s.lambda_u)) {
    j["coefficient_ratio"] = *r;
    j["lambda_mae_below_ratio"] = s.lambda_mae < *r;
  }
  return j;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t iteration) {
  return dir / ("ckpt_" + std::to_string(iteration) + ".mmck");
}

/// Runs (or resumes) training. Every iteration appends one metrics record,
/// flushed immediately. Per-step randomness is keyed by (seed, iteration,
/// sample id), so a resumed run continues the exact same sequence.
inline TrainingResult run_training(const TrainerConfig& cfg, const DatasetPools& pools, const RunPaths& paths = {},
                                   const std::function<void(const MetricsRecord&)>& on_record = {}) {
  cfg.validate();
  if (pools.num_classes != cfg.model.num_classes)
    throw ConfigError("dataset has " + std::to_string(pools.num_classes) + " classes, model expects " +
                      std::to_string(cfg.model.num_classes));
  if (pools.labeled.size() == 0 || pools.unlabeled.size() == 0) throw ConfigError("training pools are empty");

  TrainingResult res;
  auto& st = res.state;
  if (!paths.resume_from.empty()) {
    st = load_checkpoint<float>(paths.resume_from, &cfg.model);
    if (st.seed != cfg.seed) throw LoadError("checkpoint seed differs from configuration seed");
    if (st.threshold.mode != cfg.threshold_mode) throw LoadError("checkpoint threshold mode differs from configuration");
  } else {
    st.model = init_params<float>(cfg.model, cfg.seed);
    st.optimizer = AdamW<float>(cfg.optimizer, st.model.params);
    st.threshold = init_state(cfg.model.num_classes, cfg.threshold_mode, cfg.threshold_momentum, cfg.fixed_threshold);
    st.seed = cfg.seed;
  }
  st.optimizer.config = cfg.optimizer;

  std::ofstream metrics;
  if (!paths.metrics.empty()) {
    if (paths.metrics.has_parent_path()) std::filesystem::create_directories(paths.metrics.parent_path());
    metrics.open(paths.metrics, paths.resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw Error("cannot open metrics log '" + paths.metrics.string() + "'");
  }

  BatchIterator labeled_it(pools.labeled.size(), cfg.batch_labeled, derive_seed(cfg.seed, Stream::labeled_sampling));
  BatchIterator unlabeled_it(pools.unlabeled.size(), cfg.batch_unlabeled, derive_seed(cfg.seed, Stream::epoch_shuffle));

  auto grads = zeros_like(st.model.params);
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t end = paths.stop_after ? std::min(cfg.total_iterations, *paths.stop_after) : cfg.total_iterations;

  for (std::int64_t it = st.iteration; it < end; ++it) {
    const auto lb = gather_labeled(pools.labeled, labeled_it.batch(static_cast<std::size_t>(it)));
    const auto ub = gather_unlabeled(pools.unlabeled, unlabeled_it.batch(static_cast<std::size_t>(it)));
    set_zero(grads);
    StepResult step;
    try {
      step = train_step(st.model, lb, ub, st.threshold, cfg.step, cfg.seed, it, &grads);
      st.optimizer.apply(st.model.params, grads, scheduled_lr(cfg.optimizer, it, cfg.total_iterations));
    } catch (const NumericError& e) {
      if (metrics.is_open()) metrics << nlohmann::json{{"iter", it}, {"error", e.what()}}.dump() << '\n' << std::flush;
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }
    st.iteration = it + 1;
    res.diagnostic.add(step.losses);

    MetricsRecord rec;
    rec.iter = it;
    rec.losses = step.losses;
    rec.tau_global = st.threshold.tau_global;
    rec.pass_rate = static_cast<double>(step.losses.pass_count) / static_cast<double>(ub.size());
    rec.util_actual = step.utilization.actual;
    rec.util_theoretical = step.utilization.theoretical;
    if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.total_iterations) {
      rec.error_rate = evaluate(st.model, pools.test);
      res.final_error = rec.error_rate;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (metrics.is_open()) metrics << rec.to_json().dump() << '\n' << std::flush;
    if (on_record) on_record(rec);
    res.records.push_back(rec);

    if (!paths.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
        it + 1 != cfg.total_iterations)
      save_checkpoint(checkpoint_path(paths.checkpoint_dir, it + 1), st);
  }
  if (!paths.checkpoint_dir.empty()) {
    save_checkpoint(paths.checkpoint_dir / (st.iteration == cfg.total_iterations ? std::string("final.mmck")
                                                                                 : "ckpt_" + std::to_string(st.iteration) + ".mmck"),
                    st);
  }
  return res;
}

}  // namespace maskmatch
