#pragma once

// Flat run configuration. Every field has one snake_case key used in JSON
// config files and manifests; the command line exposes it as --kebab-case.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmatch/data.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/trainer.hpp"

namespace maskmatch {

struct RunConfig {
  DatasetSpec dataset{};
  TrainerConfig trainer{};
};

enum class FieldKind { integer, unsigned_integer, real, boolean, text };

struct ConfigField {
  std::string key;
  FieldKind kind;
  std::string help;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

namespace detail {

template <class M>
ConfigField num_field(std::string key, FieldKind kind, std::string help, M RunConfig::*outer, auto inner) {
  return {std::move(key), kind, std::move(help),
          [=](const RunConfig& c) { return nlohmann::json((c.*outer).*inner); },
          [=](RunConfig& c, const nlohmann::json& j) { (c.*outer).*inner = j.get<std::remove_reference_t<decltype((c.*outer).*inner)>>(); }};
}

template <class Get, class Set>
ConfigField custom_field(std::string key, FieldKind kind, std::string help, Get get, Set set) {
  return {std::move(key), kind, std::move(help), get, set};
}

}  // namespace detail

/// The full field table, in manifest order.
inline const std::vector<ConfigField>& config_fields() {
  using detail::custom_field;
  using detail::num_field;
  using K = FieldKind;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    // dataset
    f.push_back(custom_field(
        "dataset", K::text, "dataset source: synthetic, folder or raw",
        [](const RunConfig& c) { return nlohmann::json(to_string(c.dataset.source)); },
        [](RunConfig& c, const nlohmann::json& j) { c.dataset.source = parse_data_source(j.get<std::string>()); }));
    f.push_back(num_field("data_path", K::text, "class-folder root or MMRT training file", &RunConfig::dataset, &DatasetSpec::path));
    f.push_back(num_field("test_path", K::text, "MMRT test file (raw source)", &RunConfig::dataset, &DatasetSpec::test_path));
    f.push_back(num_field("classes", K::integer, "number of classes (0: infer from folder/raw data)", &RunConfig::dataset, &DatasetSpec::num_classes));
    f.push_back(num_field("labels_per_class", K::integer, "labeled examples per class", &RunConfig::dataset, &DatasetSpec::labels_per_class));
    f.push_back(num_field("image_size", K::integer, "synthetic image side length", &RunConfig::dataset, &DatasetSpec::image_size));
    f.push_back(num_field("train_per_class", K::integer, "synthetic training images per class", &RunConfig::dataset, &DatasetSpec::train_per_class));
    f.push_back(num_field("test_per_class", K::integer, "synthetic test images per class", &RunConfig::dataset, &DatasetSpec::test_per_class));
    f.push_back(num_field("test_fraction", K::real, "holdout fraction when no test split exists", &RunConfig::dataset, &DatasetSpec::test_fraction));
    // model
    auto model = [&](std::string key, std::string help, int ModelConfig::*m) {
      f.push_back(custom_field(
          std::move(key), K::integer, std::move(help),
          [m](const RunConfig& c) { return nlohmann::json(c.trainer.model.*m); },
          [m](RunConfig& c, const nlohmann::json& j) { c.trainer.model.*m = j.get<int>(); }));
    };
    model("patch_size", "patch side length", &ModelConfig::patch_size);
    model("embed_dim", "encoder width", &ModelConfig::embed_dim);
    model("depth", "encoder blocks", &ModelConfig::depth);
    model("num_heads", "encoder attention heads", &ModelConfig::num_heads);
    model("mlp_ratio", "MLP hidden width / block width", &ModelConfig::mlp_ratio);
    model("decoder_dim", "reconstruction decoder width", &ModelConfig::decoder_embed_dim);
    model("decoder_depth", "reconstruction decoder blocks", &ModelConfig::decoder_depth);
    model("decoder_heads", "reconstruction decoder attention heads", &ModelConfig::decoder_heads);
    // loop
    f.push_back(num_field("iters", K::integer, "training iterations", &RunConfig::trainer, &TrainerConfig::total_iterations));
    f.push_back(num_field("eval_every", K::integer, "evaluate every N iterations", &RunConfig::trainer, &TrainerConfig::eval_every));
    f.push_back(num_field("checkpoint_every", K::integer, "periodic checkpoint interval (0: final only)", &RunConfig::trainer, &TrainerConfig::checkpoint_every));
    f.push_back(num_field("batch_labeled", K::unsigned_integer, "labeled batch size", &RunConfig::trainer, &TrainerConfig::batch_labeled));
    f.push_back(num_field("batch_unlabeled", K::unsigned_integer, "unlabeled batch size", &RunConfig::trainer, &TrainerConfig::batch_unlabeled));
    f.push_back(num_field("seed", K::unsigned_integer, "global seed (data, init and all sampling)", &RunConfig::trainer, &TrainerConfig::seed));
    // losses and ablations
    auto step_real = [&](std::string key, std::string help, double StepConfig::*m) {
      f.push_back(custom_field(
          std::move(key), K::real, std::move(help),
          [m](const RunConfig& c) { return nlohmann::json(c.trainer.step.*m); },
          [m](RunConfig& c, const nlohmann::json& j) { c.trainer.step.*m = j.get<double>(); }));
    };
    auto step_bool = [&](std::string key, std::string help, bool StepConfig::*m) {
      f.push_back(custom_field(
          std::move(key), K::boolean, std::move(help),
          [m](const RunConfig& c) { return nlohmann::json(c.trainer.step.*m); },
          [m](RunConfig& c, const nlohmann::json& j) { c.trainer.step.*m = j.get<bool>(); }));
    };
    step_real("lambda_u", "unsupervised loss weight", &StepConfig::lambda_u);
    step_real("lambda_mae", "reconstruction loss weight", &StepConfig::lambda_mae);
    step_real("lambda_sdt", "synthetic loss weight", &StepConfig::lambda_sdt);
    step_real("mask_ratio", "fraction of patches masked for reconstruction", &StepConfig::mask_ratio);
    step_bool("normalize_pixels", "per-patch normalized reconstruction targets", &StepConfig::normalize_pixels);
    step_bool("disable_mae", "skip the reconstruction branch", &StepConfig::disable_mae);
    step_bool("disable_sdt", "skip the synthetic branch", &StepConfig::disable_sdt);
    f.push_back(custom_field(
        "sdt_mode", K::text, "sdt (joint) or mixup_only (synthetic data replaces the unsupervised term)",
        [](const RunConfig& c) { return nlohmann::json(to_string(c.trainer.step.sdt_mode)); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.sdt_mode = parse_sdt_mode(j.get<std::string>()); }));
    f.push_back(custom_field(
        "mix_alpha", K::real, "Beta(alpha, beta) mixing distribution, alpha",
        [](const RunConfig& c) { return nlohmann::json(c.trainer.step.mix_beta.alpha); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.mix_beta.alpha = j.get<double>(); }));
    f.push_back(custom_field(
        "mix_beta", K::real, "Beta(alpha, beta) mixing distribution, beta",
        [](const RunConfig& c) { return nlohmann::json(c.trainer.step.mix_beta.beta); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.mix_beta.beta = j.get<double>(); }));
    f.push_back(custom_field(
        "threshold_order", K::text, "update_then_mask or mask_then_update",
        [](const RunConfig& c) {
          return nlohmann::json(c.trainer.step.threshold_order == ThresholdOrder::update_then_mask ? "update_then_mask"
                                                                                                 : "mask_then_update");
        },
        [](RunConfig& c, const nlohmann::json& j) {
          const auto s = j.get<std::string>();
          if (s == "update_then_mask") c.trainer.step.threshold_order = ThresholdOrder::update_then_mask;
          else if (s == "mask_then_update") c.trainer.step.threshold_order = ThresholdOrder::mask_then_update;
          else throw ConfigError("unknown threshold order '" + s + "'");
        }));
    // augmentation
    f.push_back(custom_field(
        "crop_padding", K::integer, "weak augmentation pad-and-crop margin",
        [](const RunConfig& c) { return nlohmann::json(c.trainer.step.augmentation.crop_padding); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.augmentation.crop_padding = j.get<int>(); }));
    f.push_back(custom_field(
        "flip_probability", K::real, "horizontal flip probability",
        [](const RunConfig& c) { return nlohmann::json(c.trainer.step.augmentation.flip_probability); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.augmentation.flip_probability = j.get<double>(); }));
    f.push_back(custom_field(
        "strong_ops_per_image", K::integer, "strong augmentation ops applied per image",
        [](const RunConfig& c) { return nlohmann::json(c.trainer.step.augmentation.strong_ops_per_image); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.step.augmentation.strong_ops_per_image = j.get<int>(); }));
    f.push_back(custom_field(
        "strong_ops", K::text, "comma-separated strong op pool (default ranges)",
        [](const RunConfig& c) {
          std::string s;
          for (const auto& op : c.trainer.step.augmentation.strong_ops) s += (s.empty() ? "" : ",") + to_string(op.op);
          return nlohmann::json(s);
        },
        [](RunConfig& c, const nlohmann::json& j) {
          std::vector<StrongOpSpec> pool;
          std::string s = j.get<std::string>();
          std::size_t start = 0;
          while (start <= s.size()) {
            const auto comma = std::min(s.find(',', start), s.size());
            if (comma > start) pool.push_back(default_op_range(parse_strong_op(s.substr(start, comma - start))));
            start = comma + 1;
          }
          if (pool.empty()) throw ConfigError("strong op pool is empty");
          c.trainer.step.augmentation.strong_ops = std::move(pool);
        }));
    // optimizer
    auto opt = [&](std::string key, std::string help, double OptimizerConfig::*m) {
      f.push_back(custom_field(
          std::move(key), K::real, std::move(help),
          [m](const RunConfig& c) { return nlohmann::json(c.trainer.optimizer.*m); },
          [m](RunConfig& c, const nlohmann::json& j) { c.trainer.optimizer.*m = j.get<double>(); }));
    };
    opt("lr", "peak step size", &OptimizerConfig::learning_rate);
    opt("weight_decay", "decoupled weight decay", &OptimizerConfig::weight_decay);
    opt("adam_beta1", "first-moment decay", &OptimizerConfig::beta1);
    opt("adam_beta2", "second-moment decay", &OptimizerConfig::beta2);
    opt("adam_eps", "denominator epsilon", &OptimizerConfig::eps);
    opt("warmup_fraction", "linear warmup share of all iterations", &OptimizerConfig::warmup_fraction);
    opt("min_lr_fraction", "final step size as a fraction of the peak", &OptimizerConfig::min_lr_fraction);
    opt("grad_clip", "global gradient norm clip (0: off)", &OptimizerConfig::grad_clip);
    // thresholds
    f.push_back(custom_field(
        "threshold_mode", K::text, "maskmatch, freematch or fixed",
        [](const RunConfig& c) { return nlohmann::json(to_string(c.trainer.threshold_mode)); },
        [](RunConfig& c, const nlohmann::json& j) { c.trainer.threshold_mode = parse_threshold_mode(j.get<std::string>()); }));
    f.push_back(num_field("threshold_momentum", K::real, "EMA momentum of the adaptive thresholds", &RunConfig::trainer, &TrainerConfig::threshold_momentum));
    f.push_back(num_field("fixed_threshold", K::real, "constant threshold for fixed mode", &RunConfig::trainer, &TrainerConfig::fixed_threshold));
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

/// Every field with its resolved value.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(c);
  return j;
}

/// Applies a flat JSON object; unknown keys and ill-typed values are errors.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    try {
      f->set(c, value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
  }
  c.dataset.seed = c.trainer.seed;
}

/// Parses a command-line string for `key` according to the field's kind.
inline nlohmann::json parse_field_value(const ConfigField& f, const std::string& text) {
  try {
    std::size_t used = 0;
    switch (f.kind) {
      case FieldKind::integer: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FieldKind::unsigned_integer: {
        if (!text.empty() && text[0] == '-') break;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FieldKind::real: {
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FieldKind::boolean:
        if (text == "true" || text == "1" || text.empty()) return true;
        if (text == "false" || text == "0") return false;
        break;
      case FieldKind::text: return text;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value '" + text + "' for --" + kebab(f.key));
}

inline void apply_flag(RunConfig& c, const std::string& key, const std::string& text) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown option --" + kebab(key));
  apply_json(c, nlohmann::json{{key, parse_field_value(*f, text)}});
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Reads a config file, or a run manifest (its "config" member).
inline RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {}) {
  auto j = read_json_file(path);
  if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
  apply_json(base, j);
  return base;
}

/// Fills in the model fields that follow from the data.
inline void bind_to_data(RunConfig& c, const DatasetPools& pools) {
  const auto& sample = pools.labeled.images.front();
  c.trainer.model.num_classes = pools.num_classes;
  c.trainer.model.image_size = sample.height;
  c.trainer.model.channels = sample.channels;
  if (sample.height != sample.width) throw ConfigError("only square images are supported");
}

}  // namespace maskmatch
