#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "maskmatch/config.hpp"
#include "maskmatch/errors.hpp"

namespace maskmatch {

struct ExperimentRun {
  std::string label;  // human-readable row name
  std::string slug;   // directory-safe name
  RunConfig config;
};

/// The ablation matrix: four component combinations, MixUp-augmentation
/// instead of the synthetic term, and the 1/C threshold initialization.
inline std::vector<ExperimentRun> ablation_matrix(const RunConfig& base) {
  std::vector<ExperimentRun> rows;
  auto add = [&](std::string label, std::string slug, auto edit) {
    RunConfig c = base;
    c.trainer.step.disable_mae = false;
    c.trainer.step.disable_sdt = false;
    c.trainer.step.sdt_mode = SdtMode::sdt;
    c.trainer.threshold_mode = ThresholdMode::maskmatch;
    edit(c);
    rows.push_back({std::move(label), std::move(slug), std::move(c)});
  };
  add("Baseline", "baseline", [](RunConfig& c) {
    c.trainer.step.disable_mae = true;
    c.trainer.step.disable_sdt = true;
  });
  add("W/ MAE", "with_mae", [](RunConfig& c) { c.trainer.step.disable_sdt = true; });
  add("W/ SDT", "with_sdt", [](RunConfig& c) { c.trainer.step.disable_mae = true; });
  add("MaskMatch", "maskmatch", [](RunConfig&) {});
  add("W/ MixUp aug.", "with_mixup_aug", [](RunConfig& c) {
    c.trainer.step.disable_mae = true;
    c.trainer.step.sdt_mode = SdtMode::mixup_only;
  });
  add("MaskMatch (tau0=1/C)", "maskmatch_inv_c_init",
      [](RunConfig& c) { c.trainer.threshold_mode = ThresholdMode::freematch; });
  return rows;
}

enum class SweepAxis { mask_ratio, decoder_depth };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "mask-ratio" || s == "mask_ratio") return SweepAxis::mask_ratio;
  if (s == "decoder-depth" || s == "decoder_depth") return SweepAxis::decoder_depth;
  throw ConfigError("unknown sweep axis '" + s + "' (expected mask-ratio or decoder-depth)");
}

inline std::string to_string(SweepAxis a) { return a == SweepAxis::mask_ratio ? "mask-ratio" : "decoder-depth"; }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = std::min(s.find(',', start), s.size());
    if (comma > start) out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

/// One run per value with everything else (including the seed) shared.
inline std::vector<ExperimentRun> sweep_runs(const RunConfig& base, SweepAxis axis,
                                             const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ExperimentRun> runs;
  for (const auto& v : values) {
    RunConfig c = base;
    apply_flag(c, axis == SweepAxis::mask_ratio ? "mask_ratio" : "decoder_depth", v);
    std::string slug = to_string(axis) + "_" + v;
    std::replace(slug.begin(), slug.end(), '.', 'p');
    runs.push_back({v, slug, std::move(c)});
  }
  return runs;
}

}  // namespace maskmatch
