#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "maskmatch/augment.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/tensor.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

inline constexpr double kLogEps = 1e-12;

/// -sum_c target(c) * ln(max(predicted(c), 1e-12)).
inline double cross_entropy(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) throw ShapeError("cross_entropy: length mismatch");
  double h = 0.0;
  for (std::size_t c = 0; c < target.size(); ++c)
    if (target[c] != 0.0) h -= target[c] * std::log(std::max(predicted[c], kLogEps));
  return h;
}

/// Soft-target cross-entropy of a 1 x C probability row. When dlogits is given
/// it receives dH/dlogits through the softmax, honoring the log clamp.
template <class T>
T soft_cross_entropy(std::span<const double> target, const Mat<T>& probs, Mat<T>* dlogits = nullptr) {
  const auto c_count = static_cast<std::size_t>(probs.cols());
  if (target.size() != c_count) throw ShapeError("soft_cross_entropy: length mismatch");
  T h = 0;
  Mat<T> dprob(1, probs.cols());
  for (std::size_t c = 0; c < c_count; ++c) {
    const T p = probs(0, static_cast<Eigen::Index>(c));
    const T t = static_cast<T>(target[c]);
    const bool clamped = static_cast<double>(p) <= kLogEps;
    if (t != T(0)) h -= t * std::log(clamped ? static_cast<T>(kLogEps) : p);
    dprob(0, static_cast<Eigen::Index>(c)) = (t != T(0) && !clamped) ? -t / p : T(0);
  }
  if (dlogits) {
    const T dot = (dprob.array() * probs.array()).sum();
    *dlogits = (probs.array() * (dprob.array() - dot)).matrix();
  }
  return h;
}

template <class T>
ProbVector to_prob_vector(const Mat<T>& probs) {
  ProbVector p(static_cast<std::size_t>(probs.cols()));
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = static_cast<double>(probs(0, static_cast<Eigen::Index>(c)));
  return p;
}

/// Cross-entropy of one image against a soft target; accumulates scale * grad.
template <class T>
T classification_loss(const VitModel<T>& m, const Image& image, std::span<const double> target,
                      VitParams<T>* grads, T scale) {
  const auto pass = classify_forward(m, image, grads != nullptr);
  Mat<T> dlogits;
  const T h = soft_cross_entropy(target, pass.probs, grads ? &dlogits : nullptr);
  if (grads) classify_backward(m, pass, Mat<T>(dlogits * scale), *grads);
  return h;
}

/// (1/B_l) * sum_i H(y_i, F(view_i)) on already-augmented views.
template <class T>
T supervised_loss(const VitModel<T>& m, std::span<const Image> views, std::span<const int> labels,
                  VitParams<T>* grads = nullptr, T scale = T(1)) {
  if (views.empty()) throw PreconditionError("supervised loss needs a nonempty batch");
  if (views.size() != labels.size()) throw ShapeError("one label per labeled image required");
  const auto n = static_cast<T>(views.size());
  T total = 0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto target = one_hot(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(m.config.num_classes));
    total += classification_loss(m, views[i], std::span<const double>(target), grads, scale / n);
  }
  return total / n;
}

/// Weak-augments each labeled image with `rng`, then computes the supervised loss.
template <class T>
T supervised_loss(const VitModel<T>& m, std::span<const Image> images, std::span<const int> labels,
                  const AugmentationPolicy& policy, Rng& rng, VitParams<T>* grads = nullptr) {
  std::vector<Image> views;
  views.reserve(images.size());
  for (const auto& img : images) views.push_back(weak_augment(img, policy, rng));
  return supervised_loss(m, std::span<const Image>(views), labels, grads);
}

/// When the EMA threshold update happens relative to the selection mask.
enum class ThresholdOrder { update_then_mask, mask_then_update };

struct PseudoLabels {
  std::vector<ProbVector> weak_probs;
  Selection selection;
};

/// Predicts on weak views (no gradient), advances the threshold state and
/// selects confident samples in the requested order.
template <class T>
PseudoLabels pseudo_label(const VitModel<T>& m, std::span<const Image> weak_views,
                          ThresholdState& state, ThresholdOrder order) {
  if (weak_views.empty()) throw PreconditionError("unsupervised loss needs a nonempty batch");
  PseudoLabels out;
  out.weak_probs.reserve(weak_views.size());
  for (const auto& v : weak_views) out.weak_probs.push_back(classify(m, v));
  const std::span<const ProbVector> probs(out.weak_probs);
  if (order == ThresholdOrder::update_then_mask) state = update_state(std::move(state), probs);
  out.selection = selection_mask(probs, state);
  if (order == ThresholdOrder::mask_then_update) state = update_state(std::move(state), probs);
  return out;
}

template <class T>
struct UnsupervisedResult {
  T loss = 0;
  PseudoLabels labels;
};

/// (1/B_u) * sum_i M[i] * H(onehot(argmax p_i), P_i). Pseudo-labels are
/// detached; gradients flow only through the strong-view predictions.
template <class T>
T masked_consistency_loss(const VitModel<T>& m, std::span<const Image> strong_views,
                          const Selection& sel, VitParams<T>* grads, T scale) {
  const auto n = static_cast<T>(strong_views.size());
  T total = 0;
  for (std::size_t i = 0; i < strong_views.size(); ++i) {
    if (!sel.mask[i]) continue;
    const auto target = one_hot(static_cast<std::size_t>(sel.pseudo_labels[i]),
                                static_cast<std::size_t>(m.config.num_classes));
    total += classification_loss(m, strong_views[i], std::span<const double>(target), grads, scale / n);
  }
  return total / n;
}

template <class T>
UnsupervisedResult<T> unsupervised_loss(const VitModel<T>& m, std::span<const Image> weak_views,
                                        std::span<const Image> strong_views, ThresholdState& state,
                                        ThresholdOrder order = ThresholdOrder::update_then_mask,
                                        VitParams<T>* grads = nullptr, T scale = T(1)) {
  if (weak_views.size() != strong_views.size()) throw ShapeError("weak/strong view counts differ");
  UnsupervisedResult<T> r;
  r.labels = pseudo_label(m, weak_views, state, order);
  r.loss = masked_consistency_loss(m, strong_views, r.labels.selection, grads, scale);
  return r;
}

/// Draws one weak and one strong view per unlabeled image, then computes the
/// unsupervised loss.
template <class T>
UnsupervisedResult<T> unsupervised_loss(const VitModel<T>& m, std::span<const Image> images,
                                        ThresholdState& state, const AugmentationPolicy& weak,
                                        const AugmentationPolicy& strong, Rng& rng,
                                        VitParams<T>* grads = nullptr) {
  std::vector<Image> wv, sv;
  for (const auto& img : images) {
    wv.push_back(weak_augment(img, weak, rng));
    sv.push_back(strong_augment(img, strong, rng));
  }
  return unsupervised_loss(m, std::span<const Image>(wv), std::span<const Image>(sv), state,
                           ThresholdOrder::update_then_mask, grads);
}

/// The four loss terms and their weighted total.
struct LossBundle {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_mae = 0.0;
  double loss_sdt = 0.0;
  double total = 0.0;
  double lambda_u = 1.0;
  double lambda_mae = 0.01;
  double lambda_sdt = 0.5;
  std::size_t pass_count = 0;
};

/// L_s + lambda_u L_u + lambda_mae L_mae + lambda_sdt L_sdt, left to right.
inline double total_loss(double loss_s, double loss_u, double loss_mae, double loss_sdt,
                         double lambda_u, double lambda_mae, double lambda_sdt) {
  for (double v : {loss_s, loss_u, loss_mae, loss_sdt, lambda_u, lambda_mae, lambda_sdt})
    if (!std::isfinite(v)) throw NumericError("non-finite loss component");
  double total = loss_s;
  total += lambda_u * loss_u;
  total += lambda_mae * loss_mae;
  total += lambda_sdt * loss_sdt;
  return total;
}

inline double total_loss(const LossBundle& b) {
  return total_loss(b.loss_s, b.loss_u, b.loss_mae, b.loss_sdt, b.lambda_u, b.lambda_mae, b.lambda_sdt);
}

}  // namespace maskmatch
