#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/tensor.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

/// Masked token indices (0-based, ascending) for one image.
struct MaskingPlan {
  std::vector<int> masked;
  int num_tokens = 0;
  double ratio = 0.0;

  std::vector<int> visible() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(num_tokens) - masked.size());
    std::size_t j = 0;
    for (int k = 0; k < num_tokens; ++k) {
      if (j < masked.size() && masked[j] == k) ++j;
      else out.push_back(k);
    }
    return out;
  }
};

/// |masked| = round(ratio * N), clamped to [1, N-1].
inline int masked_count(int num_tokens, double ratio) {
  const auto n = static_cast<int>(std::lround(ratio * num_tokens));
  return std::clamp(n, 1, num_tokens - 1);
}

/// Uniform sample without replacement of masked_count(N, ratio) positions.
inline MaskingPlan make_masking_plan(int num_tokens, double ratio, Rng& rng) {
  if (num_tokens < 2) throw PreconditionError("masking needs at least 2 tokens");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("masking ratio must be in (0,1)");
  const int m = masked_count(num_tokens, ratio);
  std::vector<int> idx(static_cast<std::size_t>(num_tokens));
  for (int k = 0; k < num_tokens; ++k) idx[static_cast<std::size_t>(k)] = k;
  // partial Fisher-Yates: the first m slots are a uniform m-subset
  for (int i = 0; i < m; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_tokens - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  MaskingPlan plan;
  plan.masked.assign(idx.begin(), idx.begin() + m);
  std::sort(plan.masked.begin(), plan.masked.end());
  plan.num_tokens = num_tokens;
  plan.ratio = ratio;
  return plan;
}

inline constexpr double kPatchNormEps = 1e-6;

/// (x - mean) / max(population std, eps); constant patches map to zero.
template <class T>
std::vector<T> normalize_patch(std::span<const T> patch) {
  if (patch.empty()) throw PreconditionError("cannot normalize an empty patch");
  double mean = 0.0;
  for (T v : patch) mean += v;
  mean /= static_cast<double>(patch.size());
  double var = 0.0;
  for (T v : patch) var += (v - mean) * (v - mean);
  var /= static_cast<double>(patch.size());
  const double denom = std::max(std::sqrt(var), kPatchNormEps);
  std::vector<T> out(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) out[i] = static_cast<T>((patch[i] - mean) / denom);
  return out;
}

template <class T>
Mat<T> normalize_patches(const Mat<T>& patches) {
  Mat<T> out(patches.rows(), patches.cols());
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    const auto row = normalize_patch<T>(std::span<const T>(patches.row(r).data(), static_cast<std::size_t>(patches.cols())));
    for (Eigen::Index c = 0; c < patches.cols(); ++c) out(r, c) = row[static_cast<std::size_t>(c)];
  }
  return out;
}

/// (1/|masked|) * sum over masked k of mean_j (target(k,j) - recon(k,j))^2, with
/// optional per-patch normalization of the target. Writes dL/drecon when asked.
template <class T>
T mae_loss(const Mat<T>& target, const Mat<T>& recon, const MaskingPlan& plan, bool normalize,
           Mat<T>* d_recon = nullptr) {
  if (target.rows() != recon.rows() || target.cols() != recon.cols())
    throw ShapeError("target and reconstruction shapes differ");
  if (target.rows() != plan.num_tokens) throw ShapeError("patch count differs from masking plan");
  if (plan.masked.empty()) throw PreconditionError("masking plan has no masked tokens");
  const Mat<T> tgt = normalize ? normalize_patches(target) : target;
  const T denom = static_cast<T>(plan.masked.size()) * static_cast<T>(target.cols());
  if (d_recon) d_recon->setZero(recon.rows(), recon.cols());
  T loss = 0;
  for (int k : plan.masked) {
    const auto diff = (recon.row(k) - tgt.row(k)).eval();
    loss += diff.squaredNorm();
    if (d_recon) d_recon->row(k) = diff * (T(2) / denom);
  }
  return loss / denom;
}

/// Per-image MAE pass: encode visible patches, decode all positions, score the
/// masked ones. Accumulates `scale * dL/dtheta` into grads when given.
template <class T>
T mae_image_loss(const VitModel<T>& m, const Image& image, const MaskingPlan& plan, bool normalize,
                 VitParams<T>* grads, T scale) {
  check_image(m, image);
  if (plan.num_tokens != m.config.num_tokens()) throw ShapeError("masking plan does not match model");
  const Mat<T> patches = patchify<T>(image, m.config.patch_size);
  EncoderCache<T> enc_cache;
  DecoderCache<T> dec_cache;
  const auto visible = encode_visible(m, patches, plan.visible(), grads ? &enc_cache : nullptr);
  const Mat<T> recon = decode_full(m, visible, plan.masked, plan.num_tokens, grads ? &dec_cache : nullptr);
  Mat<T> d_recon;
  const T loss = mae_loss(patches, recon, plan, normalize, grads ? &d_recon : nullptr);
  if (!std::isfinite(static_cast<double>(loss))) throw NumericError("non-finite MAE loss");
  if (grads) {
    d_recon *= scale;
    const Mat<T> dlatent = decode_backward(m, dec_cache, d_recon, *grads);
    encoder_backward(m, enc_cache, dlatent, *grads);
  }
  return loss;
}

/// Mean MAE loss over a set of images, each with its own masking plan.
/// Gradients of the mean (times `scale`) accumulate into grads.
template <class T>
T mae_forward(const VitModel<T>& m, std::span<const Image> images,
              std::span<const MaskingPlan> plans, bool normalize, VitParams<T>* grads = nullptr,
              T scale = T(1)) {
  if (images.empty()) throw PreconditionError("MAE needs at least one image");
  if (images.size() != plans.size()) throw ShapeError("one masking plan per image required");
  const T per_image = scale / static_cast<T>(images.size());
  T total = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    total += mae_image_loss(m, images[i], plans[i], normalize, grads, per_image);
  return total / static_cast<T>(images.size());
}

/// Convenience overload drawing one plan per image from per-image seeds.
template <class T>
T mae_forward(const VitModel<T>& m, std::span<const Image> images, double ratio, bool normalize,
              std::span<const std::uint64_t> image_seeds, VitParams<T>* grads = nullptr,
              T scale = T(1)) {
  if (image_seeds.size() != images.size()) throw ShapeError("one seed per image required");
  std::vector<MaskingPlan> plans;
  plans.reserve(images.size());
  for (auto s : image_seeds) {
    Rng rng(s);
    plans.push_back(make_masking_plan(m.config.num_tokens(), ratio, rng));
  }
  return mae_forward(m, images, std::span<const MaskingPlan>(plans), normalize, grads, scale);
}

}  // namespace maskmatch
