#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/losses.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/tensor.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

/// Unlabeled samples that passed the threshold, with one-hot pseudo-labels.
struct CleanSet {
  std::vector<Image> images;
  std::vector<ProbVector> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return images.size(); }
};

inline CleanSet select_clean_set(std::span<const Image> images, const Selection& sel,
                                 int num_classes, std::span<const std::uint64_t> ids = {}) {
  if (images.size() != sel.mask.size() || images.size() != sel.pseudo_labels.size())
    throw ShapeError("clean set: images and mask lengths differ");
  if (!ids.empty() && ids.size() != images.size()) throw ShapeError("clean set: id count differs");
  CleanSet clean;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!sel.mask[i]) continue;
    clean.images.push_back(images[i]);
    clean.labels.push_back(one_hot(static_cast<std::size_t>(sel.pseudo_labels[i]),
                                   static_cast<std::size_t>(num_classes)));
    clean.ids.push_back(ids.empty() ? i : ids[i]);
  }
  return clean;
}

struct BetaParams {
  double alpha = 0.5;
  double beta = 0.5;
};

/// Lambda = max(L, 1 - L) with L ~ Beta(alpha, beta). Beta(0.5, 0.5) uses the
/// exact inverse transform L = sin^2(pi U / 2); other parameters go through a
/// gamma ratio.
inline double draw_mix_coefficient(Rng& rng, BetaParams p = {}) {
  if (!(p.alpha > 0.0 && p.beta > 0.0)) throw ConfigError("Beta parameters must be positive");
  double l;
  if (p.alpha == 0.5 && p.beta == 0.5) {
    const double s = std::sin(std::numbers::pi * rng.uniform() / 2.0);
    l = s * s;
  } else {
    const double a = rng.gamma(p.alpha);
    const double b = rng.gamma(p.beta);
    l = a / (a + b);
  }
  return std::max(l, 1.0 - l);
}

struct MixedPair {
  Image image;
  ProbVector label;
};

/// x' = lam x_i + (1 - lam) x_j and the same blend of the labels.
inline MixedPair mix_pair(const Image& xi, const ProbVector& pi, const Image& xj,
                          const ProbVector& pj, double lam) {
  if (!xi.same_shape(xj)) throw ShapeError("mix_pair: image shapes differ");
  if (pi.size() != pj.size()) throw ShapeError("mix_pair: label lengths differ");
  if (!(lam >= 0.5 && lam <= 1.0)) throw PreconditionError("mix coefficient must be in [0.5, 1]");
  MixedPair out{xi, ProbVector(pi.size())};
  if (lam == 1.0) {
    out.label = pi;
    return out;
  }
  const double mu = 1.0 - lam;
  for (std::size_t k = 0; k < xi.pixels.size(); ++k)
    out.image.pixels[k] = static_cast<float>(lam * xi.pixels[k] + mu * xj.pixels[k]);
  for (std::size_t c = 0; c < pi.size(); ++c) out.label[c] = lam * pi[c] + mu * pj[c];
  return out;
}

struct SyntheticBatch {
  std::vector<Image> images;
  std::vector<ProbVector> targets;
  std::vector<double> coefficients;
  /// partners[i] is the index in S of the second mixing component.
  std::vector<std::size_t> partners;
  std::size_t labeled_count = 0;
  std::size_t clean_count = 0;

  std::size_t size() const { return images.size(); }
};

/// S = labeled pairs followed by clean pairs; each S[i] is mixed with
/// S[(i + shift) mod len] for one shift drawn uniformly from [1, len - 1].
inline SyntheticBatch build_synthetic_batch(std::span<const Image> labeled_images,
                                            std::span<const int> labels, const CleanSet& clean,
                                            int num_classes, Rng& rng, BetaParams beta = {}) {
  if (labeled_images.size() != labels.size()) throw ShapeError("one label per labeled image required");
  std::vector<const Image*> src;
  std::vector<ProbVector> tgt;
  for (std::size_t i = 0; i < labeled_images.size(); ++i) {
    src.push_back(&labeled_images[i]);
    tgt.push_back(one_hot(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(num_classes)));
  }
  for (std::size_t i = 0; i < clean.size(); ++i) {
    src.push_back(&clean.images[i]);
    tgt.push_back(clean.labels[i]);
  }
  const std::size_t n = src.size();
  if (n == 0) throw PreconditionError("synthetic batch needs at least one sample");

  SyntheticBatch out;
  out.labeled_count = labeled_images.size();
  out.clean_count = clean.size();
  if (n == 1) {
    out.images.push_back(*src[0]);
    out.targets.push_back(tgt[0]);
    out.coefficients.push_back(1.0);
    out.partners.push_back(0);
    return out;
  }
  const std::size_t shift = 1 + rng.below(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + shift) % n;
    const double lam = draw_mix_coefficient(rng, beta);
    auto mixed = mix_pair(*src[i], tgt[i], *src[j], tgt[j], lam);
    out.images.push_back(std::move(mixed.image));
    out.targets.push_back(std::move(mixed.label));
    out.coefficients.push_back(lam);
    out.partners.push_back(j);
  }
  return out;
}

/// Mean soft-target cross-entropy of the model on the synthetic batch, fed
/// without further augmentation. Accumulates scale * gradient when asked.
template <class T>
T sdt_loss(const VitModel<T>& m, const SyntheticBatch& batch, VitParams<T>* grads = nullptr,
           T scale = T(1)) {
  if (batch.size() == 0) throw PreconditionError("synthetic loss needs a nonempty batch");
  const auto n = static_cast<T>(batch.size());
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += classification_loss(m, batch.images[i], std::span<const double>(batch.targets[i]), grads,
                                 scale / n);
  return total / n;
}

}  // namespace maskmatch
