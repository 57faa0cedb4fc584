#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "maskmatch/errors.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

struct OptimizerConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.05;
  double min_lr_fraction = 0.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("Adam betas must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup fraction must be in [0,1)");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  }
};

/// Linear warmup to the peak rate, then cosine decay to min_lr_fraction * peak.
inline double scheduled_lr(const OptimizerConfig& c, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return c.learning_rate;
  const auto warmup = static_cast<std::int64_t>(std::llround(c.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(total_steps - warmup, 1));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  const double floor = c.min_lr_fraction * c.learning_rate;
  return floor + (c.learning_rate - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decay applies to weight matrices only, not to biases, norms or the mask token.
inline bool decays(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
}

/// Adam with decoupled weight decay.
template <class T>
struct AdamW {
  OptimizerConfig config;
  VitParams<T> m;
  VitParams<T> v;
  std::int64_t step = 0;

  AdamW() = default;
  AdamW(const OptimizerConfig& cfg, const VitParams<T>& params)
      : config(cfg), m(zeros_like(params)), v(zeros_like(params)) {}

  /// Applies one update with step size lr. Returns the pre-clip gradient norm.
  double apply(VitParams<T>& params, VitParams<T>& grads, double lr) {
    double sq = 0.0;
    for_each_tensor([&](const std::string&, const Mat<T>& g) { sq += static_cast<double>(g.squaredNorm()); }, grads);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;
    ++step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    const T scale = static_cast<T>(clip);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(config.eps);
    const T decay = static_cast<T>(1.0 - lr * config.weight_decay);
    for_each_tensor(
        [&](const std::string& name, Mat<T>& p, Mat<T>& g, Mat<T>& mm, Mat<T>& vv) {
          const auto gs = (g.array() * scale).eval();
          mm.array() = b1 * mm.array() + (T(1) - b1) * gs;
          vv.array() = b2 * vv.array() + (T(1) - b2) * gs.square();
          if (decays(name)) p.array() *= decay;
          p.array() -= step_size * mm.array() / ((vv.array() * inv_bc2).sqrt() + eps);
        },
        params, grads, m, v);
    return norm;
  }
};

}  // namespace maskmatch
