#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskmatch/augment.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/losses.hpp"
#include "maskmatch/mae.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/sdt.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/utilization.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

/// sdt: synthetic loss added next to the unsupervised loss.
/// mixup_only: the unsupervised loss is computed on the synthetic batch instead.
enum class SdtMode { sdt, mixup_only };

inline std::string to_string(SdtMode m) { return m == SdtMode::sdt ? "sdt" : "mixup_only"; }

inline SdtMode parse_sdt_mode(const std::string& s) {
  if (s == "sdt") return SdtMode::sdt;
  if (s == "mixup_only" || s == "mixup-only") return SdtMode::mixup_only;
  throw ConfigError("unknown sdt mode '" + s + "'");
}

struct StepConfig {
  double lambda_u = 1.0;
  double lambda_mae = 0.01;
  double lambda_sdt = 0.5;
  double mask_ratio = 0.3;
  bool normalize_pixels = false;
  bool disable_mae = false;
  bool disable_sdt = false;
  SdtMode sdt_mode = SdtMode::sdt;
  BetaParams mix_beta{};
  ThresholdOrder threshold_order = ThresholdOrder::update_then_mask;
  AugmentationPolicy augmentation{};

  bool unsup_active() const { return lambda_u > 0.0; }
  bool mae_active() const { return !disable_mae && lambda_mae > 0.0; }
  bool mixup_active() const { return !disable_sdt && sdt_mode == SdtMode::mixup_only && lambda_u > 0.0; }
  bool sdt_active() const { return !disable_sdt && sdt_mode == SdtMode::sdt && lambda_sdt > 0.0; }
  bool needs_pseudo_labels() const { return unsup_active() || sdt_active(); }

  void validate() const {
    for (double v : {lambda_u, lambda_mae, lambda_sdt})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss coefficients must be finite and >= 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must be in (0,1)");
    augmentation.validate();
  }
};

struct StepResult {
  LossBundle losses;
  UtilizationRecord utilization;
};

/// Augmented views for one step. Every draw is keyed by (seed, iteration,
/// sample id) so a step is reproducible regardless of batch composition.
struct StepViews {
  std::vector<Image> labeled_weak;
  std::vector<Image> unlabeled_weak;
  std::vector<Image> unlabeled_strong;
};

inline StepViews make_views(const LabeledBatch& lb, const UnlabeledBatch& ub, const StepConfig& cfg,
                            std::uint64_t seed, std::int64_t iteration, bool with_unlabeled, bool with_strong) {
  StepViews v;
  for (std::size_t i = 0; i < lb.size(); ++i) {
    Rng rng(derive_seed(seed, Stream::weak_labeled, iteration, lb.ids[i]));
    v.labeled_weak.push_back(weak_augment(lb.images[i], cfg.augmentation, rng));
  }
  if (!with_unlabeled) return v;
  for (std::size_t i = 0; i < ub.size(); ++i) {
    Rng rng(derive_seed(seed, Stream::weak_unlabeled, iteration, ub.ids[i]));
    v.unlabeled_weak.push_back(weak_augment(ub.images[i], cfg.augmentation, rng));
    if (with_strong) {
      Rng srng(derive_seed(seed, Stream::strong_unlabeled, iteration, ub.ids[i]));
      v.unlabeled_strong.push_back(strong_augment(ub.images[i], cfg.augmentation, srng));
    }
  }
  return v;
}

/// One training step: supervised, unsupervised, MAE and synthetic terms in that
/// order, then the weighted total. Disabled or zero-weight branches are skipped.
/// `state` is advanced in place; scaled gradients of the total accumulate into
/// grads when given.
template <class T>
StepResult train_step(const VitModel<T>& m, const LabeledBatch& lb, const UnlabeledBatch& ub,
                      ThresholdState& state, const StepConfig& cfg, std::uint64_t seed,
                      std::int64_t iteration, VitParams<T>* grads = nullptr) {
  if (lb.size() == 0) throw PreconditionError("labeled batch is empty");
  if (ub.size() == 0) throw PreconditionError("unlabeled batch is empty");
  const int num_classes = m.config.num_classes;
  const bool unsup = cfg.unsup_active() && !cfg.mixup_active();
  const bool mae = cfg.mae_active();
  const bool synth = cfg.sdt_active() || cfg.mixup_active();
  const bool need_labels = unsup || synth;
  const bool need_unlabeled_views = need_labels || mae;

  const auto views = make_views(lb, ub, cfg, seed, iteration, need_unlabeled_views, unsup);

  StepResult r;
  LossBundle& b = r.losses;
  b.lambda_u = cfg.lambda_u;
  b.lambda_mae = cfg.lambda_mae;
  b.lambda_sdt = cfg.lambda_sdt;

  b.loss_s = static_cast<double>(supervised_loss(m, std::span<const Image>(views.labeled_weak),
                                                 std::span<const int>(lb.labels), grads, T(1)));

  Selection sel;
  sel.mask.assign(ub.size(), 0);
  sel.pseudo_labels.assign(ub.size(), 0);
  if (need_labels) {
    auto pl = pseudo_label(m, std::span<const Image>(views.unlabeled_weak), state, cfg.threshold_order);
    sel = std::move(pl.selection);
  }
  if (unsup)
    b.loss_u = static_cast<double>(masked_consistency_loss(
        m, std::span<const Image>(views.unlabeled_strong), sel, grads, static_cast<T>(cfg.lambda_u)));

  if (mae) {
    std::vector<Image> all;
    std::vector<MaskingPlan> plans;
    all.reserve(lb.size() + ub.size());
    const int n_tokens = m.config.num_tokens();
    for (std::size_t i = 0; i < lb.size(); ++i) {
      all.push_back(views.labeled_weak[i]);
      Rng rng(derive_seed(seed, Stream::masking, iteration, lb.ids[i], 0));
      plans.push_back(make_masking_plan(n_tokens, cfg.mask_ratio, rng));
    }
    for (std::size_t i = 0; i < ub.size(); ++i) {
      all.push_back(views.unlabeled_weak[i]);
      Rng rng(derive_seed(seed, Stream::masking, iteration, ub.ids[i], 1));
      plans.push_back(make_masking_plan(n_tokens, cfg.mask_ratio, rng));
    }
    b.loss_mae = static_cast<double>(mae_forward(m, std::span<const Image>(all), std::span<const MaskingPlan>(plans),
                                                 cfg.normalize_pixels, grads, static_cast<T>(cfg.lambda_mae)));
  }

  std::size_t clean_count = 0;
  if (synth) {
    const auto clean = select_clean_set(std::span<const Image>(views.unlabeled_weak), sel, num_classes,
                                        std::span<const std::uint64_t>(ub.ids));
    clean_count = clean.size();
    Rng rng(derive_seed(seed, Stream::synthetic, iteration));
    const auto batch = build_synthetic_batch(std::span<const Image>(views.labeled_weak),
                                             std::span<const int>(lb.labels), clean, num_classes, rng,
                                             cfg.mix_beta);
    if (cfg.mixup_active())
      b.loss_u = static_cast<double>(sdt_loss(m, batch, grads, static_cast<T>(cfg.lambda_u)));
    else
      b.loss_sdt = static_cast<double>(sdt_loss(m, batch, grads, static_cast<T>(cfg.lambda_sdt)));
  }

  b.pass_count = sel.pass_count();
  b.total = total_loss(b);
  r.utilization = compute_utilization(ub.size(), std::span<const std::uint8_t>(sel.mask),
                                      cfg.sdt_active() ? clean_count : 0, mae, unsup || cfg.mixup_active());
  r.utilization.iteration = iteration;
  return r;
}

}  // namespace maskmatch
