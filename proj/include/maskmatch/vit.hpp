#pragma once

// Desk-scale Vision Transformer: classifier, visible-token MAE encoder and the
// auxiliary reconstruction decoder. Every forward pass can record a cache that
// the matching backward pass consumes; gradients accumulate into a VitParams
// of identical structure.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "maskmatch/augment.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/tensor.hpp"

namespace maskmatch {

struct ModelConfig {
  int image_size = 32;
  int channels = 3;
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  int mlp_ratio = 4;
  int num_classes = 10;
  int decoder_embed_dim = 32;
  int decoder_depth = 4;
  int decoder_heads = 4;

  int grid() const { return image_size / patch_size; }
  int num_tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(image_size, "image_size");
    positive(channels, "channels");
    positive(patch_size, "patch_size");
    positive(embed_dim, "embed_dim");
    positive(depth, "depth");
    positive(num_heads, "num_heads");
    positive(mlp_ratio, "mlp_ratio");
    positive(decoder_embed_dim, "decoder_embed_dim");
    positive(decoder_depth, "decoder_depth");
    positive(decoder_heads, "decoder_heads");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
    if (num_tokens() < 2) throw ConfigError("model needs at least 2 tokens");
    if (embed_dim % num_heads != 0) throw ConfigError("embed_dim must be divisible by num_heads");
    if (decoder_embed_dim % decoder_heads != 0)
      throw ConfigError("decoder_embed_dim must be divisible by decoder_heads");
    // 2-D sin-cos position tables split each width into four quarters
    if (embed_dim % 4 != 0 || decoder_embed_dim % 4 != 0)
      throw ConfigError("embedding widths must be multiples of 4");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct LinearParams {
  Mat<T> w;  // in x out
  Mat<T> b;  // 1 x out
};

template <class T>
struct NormParams {
  Mat<T> gamma;  // 1 x dim
  Mat<T> beta;
};

template <class T>
struct BlockParams {
  NormParams<T> norm1;
  LinearParams<T> qkv;
  LinearParams<T> proj;
  NormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

/// Trainable parameters. Also used, zero-initialized, as a gradient buffer.
template <class T>
struct VitParams {
  LinearParams<T> patch_embed;
  std::vector<BlockParams<T>> blocks;
  NormParams<T> norm;
  LinearParams<T> head;
  LinearParams<T> decoder_embed;
  Mat<T> mask_token;  // 1 x decoder_embed_dim
  std::vector<BlockParams<T>> decoder_blocks;
  NormParams<T> decoder_norm;
  LinearParams<T> decoder_pred;
};

namespace detail {

template <class F, class... P>
void visit_linear(const std::string& name, F& f, P&... p) {
  f(name + ".w", p.w...);
  f(name + ".b", p.b...);
}

template <class F, class... P>
void visit_norm(const std::string& name, F& f, P&... p) {
  f(name + ".gamma", p.gamma...);
  f(name + ".beta", p.beta...);
}

template <class F, class... P>
void visit_block(const std::string& name, F& f, P&... p) {
  visit_norm(name + ".norm1", f, p.norm1...);
  visit_linear(name + ".qkv", f, p.qkv...);
  visit_linear(name + ".proj", f, p.proj...);
  visit_norm(name + ".norm2", f, p.norm2...);
  visit_linear(name + ".fc1", f, p.fc1...);
  visit_linear(name + ".fc2", f, p.fc2...);
}

template <class First, class... Rest>
const First& first_of(const First& f, const Rest&...) {
  return f;
}

}  // namespace detail

/// Calls f(name, tensor_a, tensor_b, ...) for every trainable tensor, walking
/// any number of identically shaped parameter sets in lockstep.
template <class F, class... P>
void for_each_tensor(F&& f, P&... p) {
  detail::visit_linear("patch_embed", f, p.patch_embed...);
  const auto& lead = detail::first_of(p...);
  for (std::size_t i = 0; i < lead.blocks.size(); ++i)
    detail::visit_block("blocks." + std::to_string(i), f, p.blocks[i]...);
  detail::visit_norm("norm", f, p.norm...);
  detail::visit_linear("head", f, p.head...);
  detail::visit_linear("decoder_embed", f, p.decoder_embed...);
  f(std::string("mask_token"), p.mask_token...);
  for (std::size_t i = 0; i < lead.decoder_blocks.size(); ++i)
    detail::visit_block("decoder_blocks." + std::to_string(i), f, p.decoder_blocks[i]...);
  detail::visit_norm("decoder_norm", f, p.decoder_norm...);
  detail::visit_linear("decoder_pred", f, p.decoder_pred...);
}

template <class T>
VitParams<T> zeros_like(const VitParams<T>& p) {
  VitParams<T> z = p;
  for_each_tensor([](const std::string&, Mat<T>& m) { m.setZero(); }, z);
  return z;
}

template <class T>
void set_zero(VitParams<T>& p) {
  for_each_tensor([](const std::string&, Mat<T>& m) { m.setZero(); }, p);
}

template <class T>
std::size_t parameter_count(const VitParams<T>& p) {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); },
                  p);
  return n;
}

/// Fixed 2-D sin-cos position table, one row per token in row-major grid order.
template <class T>
Mat<T> sincos_position_table(int grid, int dim) {
  Mat<T> table(grid * grid, dim);
  const int quarter = dim / 4;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        table(row, i) = static_cast<T>(std::sin(gx * omega));
        table(row, quarter + i) = static_cast<T>(std::cos(gx * omega));
        table(row, 2 * quarter + i) = static_cast<T>(std::sin(gy * omega));
        table(row, 3 * quarter + i) = static_cast<T>(std::cos(gy * omega));
      }
    }
  return table;
}

/// Model = configuration, trainable parameters and the fixed position tables.
template <class T>
struct VitModel {
  ModelConfig config;
  VitParams<T> params;
  Mat<T> encoder_pos;
  Mat<T> decoder_pos;
};

namespace detail {

template <class T>
Mat<T> trunc_normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do v = rng.normal(); while (std::abs(v) > 2.0);
    m.data()[i] = static_cast<T>(v * std);
  }
  return m;
}

template <class T>
LinearParams<T> init_linear(int in, int out, Rng& rng) {
  return {trunc_normal<T>(in, out, 0.02, rng), Mat<T>::Zero(1, out)};
}

template <class T>
NormParams<T> init_norm(int dim) {
  return {Mat<T>::Ones(1, dim), Mat<T>::Zero(1, dim)};
}

template <class T>
BlockParams<T> init_block(int dim, int hidden, Rng& rng) {
  BlockParams<T> b;
  b.norm1 = init_norm<T>(dim);
  b.qkv = init_linear<T>(dim, 3 * dim, rng);
  b.proj = init_linear<T>(dim, dim, rng);
  b.norm2 = init_norm<T>(dim);
  b.fc1 = init_linear<T>(dim, hidden, rng);
  b.fc2 = init_linear<T>(hidden, dim, rng);
  return b;
}

}  // namespace detail

/// Truncated-normal (std 0.02, cut at 2 std) weights, zero biases, unit norm
/// gains, fixed sin-cos position tables. Deterministic in (config, seed).
template <class T>
VitModel<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, Stream::init));
  VitModel<T> m;
  m.config = config;
  const int d = config.embed_dim, dd = config.decoder_embed_dim;
  auto& p = m.params;
  p.patch_embed = detail::init_linear<T>(config.patch_dim(), d, rng);
  for (int i = 0; i < config.depth; ++i)
    p.blocks.push_back(detail::init_block<T>(d, d * config.mlp_ratio, rng));
  p.norm = detail::init_norm<T>(d);
  p.head = detail::init_linear<T>(d, config.num_classes, rng);
  p.decoder_embed = detail::init_linear<T>(d, dd, rng);
  p.mask_token = detail::trunc_normal<T>(1, dd, 0.02, rng);
  for (int i = 0; i < config.decoder_depth; ++i)
    p.decoder_blocks.push_back(detail::init_block<T>(dd, dd * config.mlp_ratio, rng));
  p.decoder_norm = detail::init_norm<T>(dd);
  p.decoder_pred = detail::init_linear<T>(dd, config.patch_dim(), rng);
  m.encoder_pos = sincos_position_table<T>(config.grid(), d);
  m.decoder_pos = sincos_position_table<T>(config.grid(), dd);
  return m;
}

/// Closed-form trainable parameter count for a configuration.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  auto block = [&](std::size_t d) {
    const std::size_t h = d * static_cast<std::size_t>(c.mlp_ratio);
    return 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
  };
  const std::size_t d = c.embed_dim, dd = c.decoder_embed_dim, pd = c.patch_dim(),
                    k = c.num_classes;
  return (pd * d + d) + c.depth * block(d) + 2 * d + (d * k + k) + (d * dd + dd) + dd +
         c.decoder_depth * block(dd) + 2 * dd + (dd * pd + pd);
}

// ---------------------------------------------------------------------------
// Layers

namespace layers {

inline constexpr double kNormEps = 1e-6;

template <class T>
Mat<T> linear(const LinearParams<T>& p, const Mat<T>& x) {
  Mat<T> y = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

/// Accumulates weight gradients into g (if any); returns dL/dx when wanted.
template <class T>
Mat<T> linear_backward(const LinearParams<T>& p, const Mat<T>& x, const Mat<T>& dy,
                       LinearParams<T>* g, bool want_input_grad = true) {
  if (g) {
    g->w.noalias() += x.transpose() * dy;
    g->b += dy.colwise().sum();
  }
  if (!want_input_grad) return {};
  return dy * p.w.transpose();
}

template <class T>
struct NormCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <class T>
Mat<T> layer_norm(const NormParams<T>& p, const Mat<T>& x, NormCache<T>* cache) {
  const Eigen::Index n = x.rows();
  Mat<T> xhat(n, x.cols());
  ColVec<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    auto centered = (x.row(i).array() - mu).eval();
    const T var = centered.square().mean();
    rstd(i) = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    xhat.row(i) = centered * rstd(i);
  }
  Mat<T> y = ((xhat.array().rowwise() * p.gamma.row(0).array()).rowwise() + p.beta.row(0).array())
                 .matrix();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <class T>
Mat<T> layer_norm_backward(const NormParams<T>& p, const NormCache<T>& c, const Mat<T>& dy,
                           NormParams<T>* g) {
  if (g) {
    g->gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    g->beta += dy.colwise().sum();
  }
  Mat<T> dxhat = (dy.array().rowwise() * p.gamma.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <class T>
struct AttentionCache {
  Mat<T> input;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;
  Mat<T> context;
};

template <class T>
Mat<T> attention(const LinearParams<T>& qkv_p, const LinearParams<T>& proj_p, const Mat<T>& x,
                 int heads, AttentionCache<T>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols(), dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> qkv = linear(qkv_p, x);
  Mat<T> context(n, d);
  if (cache) cache->probs.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    const auto v = qkv.middleCols(2 * d + h * dh, dh);
    Mat<T> a = (q * k.transpose()) * scale;
    softmax_rows(a);
    context.middleCols(h * dh, dh).noalias() = a * v;
    if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(a);
  }
  Mat<T> out = linear(proj_p, context);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv);
    cache->context = std::move(context);
  }
  return out;
}

template <class T>
Mat<T> attention_backward(const LinearParams<T>& qkv_p, const LinearParams<T>& proj_p,
                          const AttentionCache<T>& c, const Mat<T>& dout, int heads,
                          LinearParams<T>* g_qkv, LinearParams<T>* g_proj) {
  const Eigen::Index n = c.input.rows(), d = c.input.cols(), dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> dcontext = linear_backward(proj_p, c.context, dout, g_proj);
  Mat<T> dqkv(n, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const auto& a = c.probs[static_cast<std::size_t>(h)];
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(d + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    const auto dctx = dcontext.middleCols(h * dh, dh);
    Mat<T> da = dctx * v.transpose();
    dqkv.middleCols(2 * d + h * dh, dh).noalias() = a.transpose() * dctx;
    const ColVec<T> row_dot = (da.array() * a.array()).rowwise().sum();
    Mat<T> ds = (a.array() * (da.array().colwise() - row_dot.array())).matrix() * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return linear_backward(qkv_p, c.input, dqkv, g_qkv);
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
struct MlpCache {
  Mat<T> input;
  Mat<T> hidden;  // pre-activation
  Mat<T> activated;
};

template <class T>
Mat<T> mlp(const LinearParams<T>& fc1, const LinearParams<T>& fc2, const Mat<T>& x,
           MlpCache<T>* cache) {
  Mat<T> hidden = linear(fc1, x);
  Mat<T> act = hidden.unaryExpr([](T v) { return gelu(v); });
  Mat<T> out = linear(fc2, act);
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
    cache->activated = std::move(act);
  }
  return out;
}

template <class T>
Mat<T> mlp_backward(const LinearParams<T>& fc1, const LinearParams<T>& fc2, const MlpCache<T>& c,
                    const Mat<T>& dout, LinearParams<T>* g1, LinearParams<T>* g2) {
  Mat<T> dact = linear_backward(fc2, c.activated, dout, g2);
  Mat<T> dhidden = (dact.array() * c.hidden.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
  return linear_backward(fc1, c.input, dhidden, g1);
}

template <class T>
struct BlockCache {
  NormCache<T> norm1;
  AttentionCache<T> attn;
  NormCache<T> norm2;
  MlpCache<T> mlp;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(.)).
template <class T>
Mat<T> block(const BlockParams<T>& p, const Mat<T>& x, int heads, BlockCache<T>* cache) {
  Mat<T> h = layer_norm(p.norm1, x, cache ? &cache->norm1 : nullptr);
  Mat<T> mid = x + attention(p.qkv, p.proj, h, heads, cache ? &cache->attn : nullptr);
  Mat<T> h2 = layer_norm(p.norm2, mid, cache ? &cache->norm2 : nullptr);
  return mid + mlp(p.fc1, p.fc2, h2, cache ? &cache->mlp : nullptr);
}

template <class T>
Mat<T> block_backward(const BlockParams<T>& p, const BlockCache<T>& c, const Mat<T>& dout,
                      int heads, BlockParams<T>* g) {
  Mat<T> dh2 = mlp_backward(p.fc1, p.fc2, c.mlp, dout, g ? &g->fc1 : nullptr, g ? &g->fc2 : nullptr);
  Mat<T> dmid = dout + layer_norm_backward(p.norm2, c.norm2, dh2, g ? &g->norm2 : nullptr);
  Mat<T> dh = attention_backward(p.qkv, p.proj, c.attn, dmid, heads, g ? &g->qkv : nullptr,
                                 g ? &g->proj : nullptr);
  return dmid + layer_norm_backward(p.norm1, c.norm1, dh, g ? &g->norm1 : nullptr);
}

}  // namespace layers

// ---------------------------------------------------------------------------
// Encoder / classifier / decoder passes

/// Encoder output for a subset of token positions (0-based grid indices).
template <class T>
struct TokenEmbeddings {
  Mat<T> vectors;
  std::vector<int> positions;
};

template <class T>
struct EncoderCache {
  Mat<T> patches;
  std::vector<layers::BlockCache<T>> blocks;
  layers::NormCache<T> norm;
};

namespace detail {

inline void check_positions(const std::vector<int>& positions, int num_tokens) {
  std::vector<bool> seen(static_cast<std::size_t>(num_tokens), false);
  for (int k : positions) {
    if (k < 0 || k >= num_tokens) throw PreconditionError("token position out of range");
    if (seen[static_cast<std::size_t>(k)]) throw PreconditionError("duplicate token position");
    seen[static_cast<std::size_t>(k)] = true;
  }
}

}  // namespace detail

/// Embeds the given patch rows at their grid positions and runs the encoder
/// blocks and final norm.
template <class T>
Mat<T> encoder_forward(const VitModel<T>& m, const Mat<T>& patches,
                       const std::vector<int>& positions, EncoderCache<T>* cache) {
  Mat<T> x = layers::linear(m.params.patch_embed, patches);
  for (std::size_t r = 0; r < positions.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) += m.encoder_pos.row(positions[r]);
  if (cache) {
    cache->patches = patches;
    cache->blocks.resize(m.params.blocks.size());
  }
  for (std::size_t i = 0; i < m.params.blocks.size(); ++i)
    x = layers::block(m.params.blocks[i], x, m.config.num_heads, cache ? &cache->blocks[i] : nullptr);
  return layers::layer_norm(m.params.norm, x, cache ? &cache->norm : nullptr);
}

template <class T>
void encoder_backward(const VitModel<T>& m, const EncoderCache<T>& c, const Mat<T>& dz,
                      VitParams<T>& g) {
  Mat<T> dx = layers::layer_norm_backward(m.params.norm, c.norm, dz, &g.norm);
  for (std::size_t i = m.params.blocks.size(); i-- > 0;)
    dx = layers::block_backward(m.params.blocks[i], c.blocks[i], dx, m.config.num_heads, &g.blocks[i]);
  layers::linear_backward(m.params.patch_embed, c.patches, dx, &g.patch_embed, false);
}

template <class T>
std::vector<int> all_positions(const VitModel<T>& m) {
  std::vector<int> pos(static_cast<std::size_t>(m.config.num_tokens()));
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  return pos;
}

/// Forward state of one classification; `probs` is 1 x C.
template <class T>
struct ClassifierPass {
  EncoderCache<T> encoder;
  Mat<T> pooled;
  Mat<T> probs;
};

template <class T>
void check_image(const VitModel<T>& m, const Image& image) {
  const auto& c = m.config;
  if (image.height != c.image_size || image.width != c.image_size || image.channels != c.channels)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     "x" + std::to_string(image.channels) + " does not match model input " +
                     std::to_string(c.image_size) + "x" + std::to_string(c.image_size) + "x" +
                     std::to_string(c.channels));
}

/// patchify -> encoder on all tokens -> mean pool -> linear head -> softmax.
template <class T>
ClassifierPass<T> classify_forward(const VitModel<T>& m, const Image& image, bool keep_cache) {
  check_image(m, image);
  ClassifierPass<T> pass;
  const Mat<T> z = encoder_forward(m, patchify<T>(image, m.config.patch_size), all_positions(m),
                                   keep_cache ? &pass.encoder : nullptr);
  pass.pooled = z.colwise().mean();
  pass.probs = layers::linear(m.params.head, pass.pooled);
  softmax_rows(pass.probs);
  if (!pass.probs.allFinite()) throw NumericError("non-finite classifier output");
  return pass;
}

/// Backward from dL/dlogits (1 x C) through head, pooling and encoder.
template <class T>
void classify_backward(const VitModel<T>& m, const ClassifierPass<T>& pass, const Mat<T>& dlogits,
                       VitParams<T>& g) {
  Mat<T> dpooled = layers::linear_backward(m.params.head, pass.pooled, dlogits, &g.head);
  const auto n = static_cast<Eigen::Index>(m.config.num_tokens());
  Mat<T> dz = dpooled.replicate(n, 1) / static_cast<T>(n);
  encoder_backward(m, pass.encoder, dz, g);
}

template <class T>
ProbVector classify(const VitModel<T>& m, const Image& image) {
  const auto pass = classify_forward(m, image, false);
  ProbVector p(static_cast<std::size_t>(pass.probs.cols()));
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = static_cast<double>(pass.probs(0, static_cast<Eigen::Index>(c)));
  return p;
}

/// Runs the encoder on visible patches only. `patches` holds all N_k patch
/// rows of the image; only rows listed in visible_positions are embedded.
template <class T>
TokenEmbeddings<T> encode_visible(const VitModel<T>& m, const Mat<T>& patches,
                                  const std::vector<int>& visible_positions,
                                  EncoderCache<T>* cache = nullptr) {
  if (visible_positions.empty()) throw PreconditionError("visible token set is empty");
  if (patches.rows() != m.config.num_tokens() || patches.cols() != m.config.patch_dim())
    throw ShapeError("patch matrix does not match model configuration");
  detail::check_positions(visible_positions, m.config.num_tokens());
  Mat<T> visible(static_cast<Eigen::Index>(visible_positions.size()), patches.cols());
  for (std::size_t r = 0; r < visible_positions.size(); ++r)
    visible.row(static_cast<Eigen::Index>(r)) = patches.row(visible_positions[r]);
  return {encoder_forward(m, visible, visible_positions, cache), visible_positions};
}

template <class T>
struct DecoderCache {
  Mat<T> latent;
  std::vector<int> visible;
  std::vector<int> masked;
  std::vector<layers::BlockCache<T>> blocks;
  layers::NormCache<T> norm;
  Mat<T> normed;
};

/// Full-sequence decoder: visible embeddings projected to decoder width, the
/// shared mask token at every masked position, decoder position table, blocks,
/// norm and a linear per-patch reconstruction head. Returns N_k x patch_dim.
template <class T>
Mat<T> decode_full(const VitModel<T>& m, const TokenEmbeddings<T>& visible,
                   const std::vector<int>& masked, int num_tokens,
                   DecoderCache<T>* cache = nullptr) {
  if (num_tokens != m.config.num_tokens()) throw PreconditionError("token count mismatch");
  if (visible.positions.size() + masked.size() != static_cast<std::size_t>(num_tokens))
    throw PreconditionError("visible and masked positions do not cover all tokens");
  std::vector<int> all = visible.positions;
  all.insert(all.end(), masked.begin(), masked.end());
  detail::check_positions(all, num_tokens);

  const Mat<T> projected = layers::linear(m.params.decoder_embed, visible.vectors);
  Mat<T> x(num_tokens, m.config.decoder_embed_dim);
  for (std::size_t r = 0; r < visible.positions.size(); ++r)
    x.row(visible.positions[r]) = projected.row(static_cast<Eigen::Index>(r));
  for (int k : masked) x.row(k) = m.params.mask_token.row(0);
  x += m.decoder_pos;
  if (cache) cache->blocks.resize(m.params.decoder_blocks.size());
  for (std::size_t i = 0; i < m.params.decoder_blocks.size(); ++i)
    x = layers::block(m.params.decoder_blocks[i], x, m.config.decoder_heads,
                      cache ? &cache->blocks[i] : nullptr);
  Mat<T> normed = layers::layer_norm(m.params.decoder_norm, x, cache ? &cache->norm : nullptr);
  Mat<T> pred = layers::linear(m.params.decoder_pred, normed);
  if (cache) {
    cache->latent = visible.vectors;
    cache->visible = visible.positions;
    cache->masked = masked;
    cache->normed = std::move(normed);
  }
  return pred;
}

/// Backward from dL/dprediction; returns dL/d(visible encoder embeddings).
template <class T>
Mat<T> decode_backward(const VitModel<T>& m, const DecoderCache<T>& c, const Mat<T>& dpred,
                       VitParams<T>& g) {
  Mat<T> dnormed = layers::linear_backward(m.params.decoder_pred, c.normed, dpred, &g.decoder_pred);
  Mat<T> dx = layers::layer_norm_backward(m.params.decoder_norm, c.norm, dnormed, &g.decoder_norm);
  for (std::size_t i = m.params.decoder_blocks.size(); i-- > 0;)
    dx = layers::block_backward(m.params.decoder_blocks[i], c.blocks[i], dx, m.config.decoder_heads,
                                &g.decoder_blocks[i]);
  for (int k : c.masked) g.mask_token.row(0) += dx.row(k);
  Mat<T> dprojected(static_cast<Eigen::Index>(c.visible.size()), dx.cols());
  for (std::size_t r = 0; r < c.visible.size(); ++r)
    dprojected.row(static_cast<Eigen::Index>(r)) = dx.row(c.visible[r]);
  return layers::linear_backward(m.params.decoder_embed, c.latent, dprojected, &g.decoder_embed);
}

/// Converts a model between scalar types (e.g. a float checkpoint to double).
template <class To, class From>
VitModel<To> cast_model(const VitModel<From>& src) {
  VitModel<To> dst = init_params<To>(src.config, 0);
  for_each_tensor([](const std::string&, Mat<To>& d, const Mat<From>& s) { d = s.template cast<To>(); },
                  dst.params, src.params);
  return dst;
}

}  // namespace maskmatch
