#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/tensor.hpp"

namespace maskmatch {

/// maskmatch: adaptive, starts at tau = nu = 1 (nothing passes at first).
/// freematch: adaptive, starts at tau = nu = 1/C.
/// fixed: a constant threshold for every class, never updated.
enum class ThresholdMode { maskmatch, freematch, fixed };

inline std::string to_string(ThresholdMode m) {
  switch (m) {
    case ThresholdMode::maskmatch: return "maskmatch";
    case ThresholdMode::freematch: return "freematch";
    case ThresholdMode::fixed: return "fixed";
  }
  return "?";
}

inline ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "maskmatch") return ThresholdMode::maskmatch;
  if (s == "freematch") return ThresholdMode::freematch;
  if (s == "fixed") return ThresholdMode::fixed;
  throw ConfigError("unknown threshold mode '" + s + "'");
}

/// Self-adaptive class-specific threshold: a global EMA of batch max-confidence
/// and per-class EMAs of mean class probability.
struct ThresholdState {
  double tau_global = 1.0;
  std::vector<double> nu_local;
  double momentum = 0.999;
  ThresholdMode mode = ThresholdMode::maskmatch;
  std::int64_t iteration = 0;

  std::size_t num_classes() const { return nu_local.size(); }
  bool adaptive() const { return mode != ThresholdMode::fixed; }
  bool operator==(const ThresholdState&) const = default;
};

/// For fixed mode `fixed_threshold` is the constant; it is ignored otherwise.
inline ThresholdState init_state(int num_classes, ThresholdMode mode, double momentum,
                                 double fixed_threshold = 0.95) {
  if (num_classes < 2) throw ConfigError("threshold state needs at least 2 classes");
  if (!(momentum > 0.0 && momentum < 1.0) && mode != ThresholdMode::fixed)
    throw ConfigError("EMA momentum must be in (0,1)");
  ThresholdState s;
  s.mode = mode;
  s.momentum = momentum;
  double init = 1.0;
  switch (mode) {
    case ThresholdMode::maskmatch: init = 1.0; break;
    case ThresholdMode::freematch: init = 1.0 / num_classes; break;
    case ThresholdMode::fixed:
      if (!(fixed_threshold > 0.0 && fixed_threshold <= 1.0))
        throw ConfigError("fixed threshold must be in (0,1]");
      init = fixed_threshold;
      break;
  }
  s.tau_global = init;
  s.nu_local.assign(static_cast<std::size_t>(num_classes), init);
  return s;
}

/// One EMA step from the weak-view probabilities of an unlabeled batch.
/// Fixed mode returns the state unchanged.
inline ThresholdState update_state(ThresholdState state, std::span<const ProbVector> probs) {
  if (!state.adaptive()) return state;
  if (probs.empty()) throw PreconditionError("update_state needs a nonempty batch");
  const std::size_t c_count = state.num_classes();
  double mean_max = 0.0;
  std::vector<double> mean_class(c_count, 0.0);
  for (const auto& p : probs) {
    if (p.size() != c_count) throw ShapeError("probability vector length differs from class count");
    mean_max += *std::max_element(p.begin(), p.end());
    for (std::size_t c = 0; c < c_count; ++c) mean_class[c] += p[c];
  }
  const double n = static_cast<double>(probs.size());
  const double m = state.momentum;
  state.tau_global = m * state.tau_global + (1.0 - m) * (mean_max / n);
  for (std::size_t c = 0; c < c_count; ++c)
    state.nu_local[c] = m * state.nu_local[c] + (1.0 - m) * (mean_class[c] / n);
  ++state.iteration;
  return state;
}

/// tau(c) = nu(c) / max nu * tau; the class with the largest nu gets exactly tau.
inline std::vector<double> class_thresholds(const ThresholdState& state) {
  if (!state.adaptive()) return state.nu_local;
  const double top = *std::max_element(state.nu_local.begin(), state.nu_local.end());
  std::vector<double> out(state.nu_local.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = state.nu_local[c] == top ? state.tau_global : state.nu_local[c] / top * state.tau_global;
  return out;
}

struct Selection {
  std::vector<std::uint8_t> mask;
  /// Hard pseudo-label (argmax, lowest index on ties) for every sample.
  std::vector<int> pseudo_labels;

  std::size_t pass_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

/// mask[i] = 1 iff max(p_i) > tau(argmax p_i), strictly.
inline Selection selection_mask(std::span<const ProbVector> probs, const ThresholdState& state) {
  const auto thresholds = class_thresholds(state);
  Selection s;
  s.mask.reserve(probs.size());
  s.pseudo_labels.reserve(probs.size());
  for (const auto& p : probs) {
    if (p.size() != thresholds.size()) throw ShapeError("probability vector length differs from class count");
    const auto label = argmax(p);
    s.pseudo_labels.push_back(static_cast<int>(label));
    s.mask.push_back(p[label] > thresholds[label] ? 1 : 0);
  }
  return s;
}

}  // namespace maskmatch
