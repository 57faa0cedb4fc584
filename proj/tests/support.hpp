#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "maskmatch/maskmatch.hpp"

namespace mmtest {

using namespace maskmatch;

/// 8x8 RGB, patch 4, two encoder blocks of width 16, three classes.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.image_size = 8;
  c.channels = 3;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  c.decoder_embed_dim = 8;
  c.decoder_depth = 1;
  c.decoder_heads = 2;
  return c;
}

/// Initialized model with extra Gaussian noise on every tensor so that
/// activations and gradients are far from the near-zero regime of a fresh init.
template <class T>
VitModel<T> noisy_model(const ModelConfig& c, std::uint64_t seed, double noise = 0.3) {
  auto m = init_params<T>(c, seed);
  Rng rng(seed ^ 0x5eedULL);
  for_each_tensor(
      [&](const std::string&, Mat<T>& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += static_cast<T>(noise * rng.normal());
      },
      m.params);
  return m;
}

inline Image random_image(int h, int w, int c, Rng& rng) {
  Image img(h, w, c);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

inline std::vector<Image> random_images(std::size_t n, int size, int channels, Rng& rng) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(size, size, channels, rng));
  return out;
}

inline ProbVector random_probs(std::size_t c, Rng& rng) {
  ProbVector p(c);
  double s = 0.0;
  for (auto& v : p) s += (v = rng.uniform() + 1e-3);
  for (auto& v : p) v /= s;
  return p;
}

/// A loss that also accumulates its gradient into `grads` when non-null.
using LossFn = std::function<double(const VitModel<double>&, VitParams<double>*)>;

struct GradCheckResult {
  std::size_t probes = 0;
  /// Probes whose analytic or numeric derivative exceeds the absolute floor.
  std::size_t significant = 0;
  double worst = 0.0;
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central finite differences at `probes` random parameters. The error is
/// |a - n| / max(|a|, |n|, floor). Rounding noise in the difference quotient
/// is about 1e-11 at h = 1e-5, so derivatives that are structurally zero (key
/// biases, for one) would otherwise produce meaningless ratios.
inline GradCheckResult gradient_check(VitModel<double> m, const LossFn& loss, std::size_t probes,
                                      std::uint64_t seed, double h = 1e-5, double floor = 1e-6) {
  auto grads = zeros_like(m.params);
  loss(m, &grads);
  struct Slot {
    std::string name;
    Mat<double>* param;
    const Mat<double>* grad;
  };
  std::vector<Slot> slots;
  for_each_tensor([&](const std::string& n, Mat<double>& p, Mat<double>& g) { slots.push_back({n, &p, &g}); },
                  m.params, grads);
  GradCheckResult r;
  Rng rng(seed);
  for (std::size_t k = 0; k < probes; ++k) {
    const auto& s = slots[rng.below(slots.size())];
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(s.param->size())));
    const double orig = s.param->data()[i];
    s.param->data()[i] = orig + h;
    const double up = loss(m, nullptr);
    s.param->data()[i] = orig - h;
    const double down = loss(m, nullptr);
    s.param->data()[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = s.grad->data()[i];
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double err = std::abs(analytic - numeric) / scale;
    ++r.probes;
    if (std::max(std::abs(analytic), std::abs(numeric)) > floor) ++r.significant;
    if (err > r.worst) {
      r.worst = err;
      r.worst_name = s.name + "[" + std::to_string(i) + "]";
      r.worst_analytic = analytic;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

/// Closed-form EMA after t updates: m^t x0 + sum_j m^(t-1-j) (1-m) s_j,
/// with every power computed directly rather than by recursion.
inline double ema_closed_form(double x0, double m, const std::vector<double>& stats) {
  const auto t = static_cast<int>(stats.size());
  double v = std::pow(m, t) * x0;
  for (int j = 0; j < t; ++j) v += std::pow(m, t - 1 - j) * (1.0 - m) * stats[static_cast<std::size_t>(j)];
  return v;
}

struct EmaOracleResult {
  double worst_tau = 0.0;
  double worst_nu = 0.0;
};

/// Drives update_state with `streams` random streams of `updates` batches and
/// compares (tau, nu) with the closed form after every update.
inline EmaOracleResult threshold_oracle_check(int streams, int updates, std::uint64_t seed) {
  EmaOracleResult r;
  Rng rng(seed);
  const double momenta[] = {0.9, 0.99, 0.999};
  for (int s = 0; s < streams; ++s) {
    const int c = static_cast<int>(rng.integer(2, 10));
    const double m = momenta[rng.below(3)];
    const auto mode = rng.bernoulli(0.5) ? ThresholdMode::maskmatch : ThresholdMode::freematch;
    const double init = mode == ThresholdMode::maskmatch ? 1.0 : 1.0 / c;
    auto state = init_state(c, mode, m);
    std::vector<double> max_stats;
    std::vector<std::vector<double>> class_stats(static_cast<std::size_t>(c));
    for (int u = 0; u < updates; ++u) {
      const auto n = static_cast<std::size_t>(rng.integer(1, 16));
      std::vector<ProbVector> batch;
      double mean_max = 0.0;
      std::vector<double> mean_class(static_cast<std::size_t>(c), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        batch.push_back(random_probs(static_cast<std::size_t>(c), rng));
        mean_max += *std::max_element(batch.back().begin(), batch.back().end()) / static_cast<double>(n);
        for (int k = 0; k < c; ++k) mean_class[static_cast<std::size_t>(k)] += batch.back()[static_cast<std::size_t>(k)] / static_cast<double>(n);
      }
      state = update_state(state, std::span<const ProbVector>(batch));
      max_stats.push_back(mean_max);
      for (int k = 0; k < c; ++k) class_stats[static_cast<std::size_t>(k)].push_back(mean_class[static_cast<std::size_t>(k)]);
      r.worst_tau = std::max(r.worst_tau, std::abs(state.tau_global - ema_closed_form(init, m, max_stats)));
      for (int k = 0; k < c; ++k)
        r.worst_nu = std::max(r.worst_nu, std::abs(state.nu_local[static_cast<std::size_t>(k)] -
                                                   ema_closed_form(init, m, class_stats[static_cast<std::size_t>(k)])));
    }
  }
  return r;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("maskmatch_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline LabeledBatch labeled_batch(std::size_t n, int size, int classes, Rng& rng) {
  LabeledBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.images.push_back(random_image(size, size, 3, rng));
    b.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    b.ids.push_back(i);
  }
  return b;
}

inline UnlabeledBatch unlabeled_batch(std::size_t n, int size, Rng& rng, std::uint64_t first_id = 100) {
  UnlabeledBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.images.push_back(random_image(size, size, 3, rng));
    b.ids.push_back(first_id + i);
  }
  return b;
}

}  // namespace mmtest
