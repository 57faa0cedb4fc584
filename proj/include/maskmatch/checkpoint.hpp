#pragma once

// MMCK checkpoint container, all integers little-endian:
//   "MMCK" | version u32 | metadata length u64 | metadata (JSON text)
//   tensor count u32 | per tensor: name length u32, name, dtype u8, rows u32, cols u32
//   tensor payloads in directory order | FNV-1a 64 checksum of all preceding bytes

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmatch/errors.hpp"
#include "maskmatch/optim.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/vit.hpp"

namespace maskmatch {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct NamedTensor {
  std::string name;
  DType dtype = DType::f32;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> bytes;

  bool operator==(const NamedTensor&) const = default;
};

/// Raw container: a JSON metadata block and a directory of named tensors.
struct CheckpointFile {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <class T>
NamedTensor make_tensor(const std::string& name, const Mat<T>& m) {
  NamedTensor t{name, dtype_of<T>(), static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
  t.bytes.resize(static_cast<std::size_t>(m.size()) * sizeof(T));
  std::memcpy(t.bytes.data(), m.data(), t.bytes.size());
  return t;
}

template <class T>
Mat<T> tensor_to_mat(const NamedTensor& t) {
  if (t.dtype != dtype_of<T>()) throw LoadError("tensor '" + t.name + "' has an unexpected dtype");
  Mat<T> m(t.rows, t.cols);
  if (t.bytes.size() != static_cast<std::size_t>(m.size()) * sizeof(T))
    throw LoadError("tensor '" + t.name + "' payload size is inconsistent");
  std::memcpy(m.data(), t.bytes.data(), t.bytes.size());
  return m;
}

namespace detail {

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class I>
void put(std::vector<std::uint8_t>& out, I v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(I));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& d, std::size_t limit) : d_(d), limit_(limit) {}

  template <class I>
  I get() {
    need(sizeof(I));
    I v;
    std::memcpy(&v, d_.data() + pos_, sizeof(I));
    pos_ += sizeof(I);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(d_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> b(d_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                d_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > limit_ - pos_) throw LoadError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& d_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Writes to a temporary sibling file and renames it into place.
inline void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ck) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'M', 'C', 'K'});
  detail::put(out, kCheckpointVersion);
  const std::string meta = ck.metadata.dump();
  detail::put(out, static_cast<std::uint64_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  detail::put(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.bytes.size() != static_cast<std::size_t>(t.rows) * t.cols * dtype_size(t.dtype))
      throw PreconditionError("tensor '" + t.name + "' payload does not match its shape");
    detail::put(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put(out, static_cast<std::uint8_t>(t.dtype));
    detail::put(out, t.rows);
    detail::put(out, t.cols);
  }
  for (const auto& t : ck.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  detail::put(out, detail::fnv1a(out, out.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + tmp.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 16) throw LoadError("checkpoint is truncated");
  if (std::memcmp(data.data(), "MMCK", 4) != 0) throw LoadError("not a checkpoint file (bad magic)");
  const std::size_t body = data.size() - 8;
  detail::Reader r(data, body);
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  CheckpointFile ck;
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > body) throw LoadError("checkpoint is truncated");
  try {
    ck.metadata = nlohmann::json::parse(r.str(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  if (count > body) throw LoadError("checkpoint is truncated");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.get<std::uint32_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt != 1 && dt != 2) throw LoadError("tensor '" + t.name + "' has unknown dtype");
    t.dtype = static_cast<DType>(dt);
    t.rows = r.get<std::uint32_t>();
    t.cols = r.get<std::uint32_t>();
    ck.tensors.push_back(std::move(t));
  }
  for (auto& t : ck.tensors) t.bytes = r.bytes(static_cast<std::size_t>(t.rows) * t.cols * dtype_size(t.dtype));
  if (r.pos() != body) throw LoadError("checkpoint has trailing bytes");
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, 8);
  if (stored != detail::fnv1a(data, body)) throw LoadError("checkpoint checksum mismatch");
  return ck;
}

// ---------------------------------------------------------------------------
// Training state

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},   {"channels", c.channels},
          {"patch_size", c.patch_size},   {"embed_dim", c.embed_dim},
          {"depth", c.depth},             {"num_heads", c.num_heads},
          {"mlp_ratio", c.mlp_ratio},     {"num_classes", c.num_classes},
          {"decoder_embed_dim", c.decoder_embed_dim}, {"decoder_depth", c.decoder_depth},
          {"decoder_heads", c.decoder_heads}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size");
  c.channels = j.at("channels");
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.depth = j.at("depth");
  c.num_heads = j.at("num_heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.num_classes = j.at("num_classes");
  c.decoder_embed_dim = j.at("decoder_embed_dim");
  c.decoder_depth = j.at("decoder_depth");
  c.decoder_heads = j.at("decoder_heads");
  return c;
}

/// Everything needed to continue a run: model, optimizer moments, threshold
/// state and position in the sample streams. All per-step randomness is
/// derived from (seed, iteration, sample id), so seed + iteration is the
/// complete generator state.
template <class T>
struct TrainingState {
  VitModel<T> model;
  AdamW<T> optimizer;
  ThresholdState threshold;
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<T>& s) {
  CheckpointFile ck;
  ck.metadata = {{"model", model_config_to_json(s.model.config)},
                 {"iteration", s.iteration},
                 {"seed", s.seed},
                 {"optimizer_step", s.optimizer.step},
                 {"threshold_mode", to_string(s.threshold.mode)},
                 {"threshold_iteration", s.threshold.iteration},
                 {"extra", s.extra}};
  for_each_tensor([&](const std::string& name, const Mat<T>& p) { ck.tensors.push_back(make_tensor("params." + name, p)); },
                  s.model.params);
  for_each_tensor([&](const std::string& name, const Mat<T>& p) { ck.tensors.push_back(make_tensor("adam_m." + name, p)); },
                  s.optimizer.m);
  for_each_tensor([&](const std::string& name, const Mat<T>& p) { ck.tensors.push_back(make_tensor("adam_v." + name, p)); },
                  s.optimizer.v);
  Mat<double> scalars(1, 2);
  scalars << s.threshold.tau_global, s.threshold.momentum;
  ck.tensors.push_back(make_tensor("threshold.scalars", scalars));
  Mat<double> nu(1, static_cast<Eigen::Index>(s.threshold.nu_local.size()));
  for (Eigen::Index c = 0; c < nu.cols(); ++c) nu(0, c) = s.threshold.nu_local[static_cast<std::size_t>(c)];
  ck.tensors.push_back(make_tensor("threshold.nu", nu));
  Mat<double> opt(1, 8);
  const auto& oc = s.optimizer.config;
  opt << oc.learning_rate, oc.weight_decay, oc.beta1, oc.beta2, oc.eps, oc.warmup_fraction, oc.min_lr_fraction,
      oc.grad_clip;
  ck.tensors.push_back(make_tensor("optimizer.config", opt));
  write_checkpoint_file(path, ck);
}

/// Loads a training state. When `expected` is given the stored architecture
/// must match it exactly.
template <class T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  const auto ck = read_checkpoint_file(path);
  TrainingState<T> s;
  try {
    const auto cfg = model_config_from_json(ck.metadata.at("model"));
    if (expected && !(cfg == *expected))
      throw LoadError("checkpoint architecture (depth " + std::to_string(cfg.depth) + ", embed " +
                      std::to_string(cfg.embed_dim) + ", decoder depth " + std::to_string(cfg.decoder_depth) +
                      ") does not match the requested configuration (depth " + std::to_string(expected->depth) +
                      ", embed " + std::to_string(expected->embed_dim) + ", decoder depth " +
                      std::to_string(expected->decoder_depth) + ")");
    s.model = init_params<T>(cfg, 0);
    s.iteration = ck.metadata.at("iteration");
    s.seed = ck.metadata.at("seed");
    s.extra = ck.metadata.value("extra", nlohmann::json::object());
    s.optimizer.m = zeros_like(s.model.params);
    s.optimizer.v = zeros_like(s.model.params);
    s.optimizer.step = ck.metadata.at("optimizer_step");
    s.threshold.mode = parse_threshold_mode(ck.metadata.at("threshold_mode"));
    s.threshold.iteration = ck.metadata.at("threshold_iteration");
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint metadata is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint metadata is invalid: ") + e.what());
  }
  auto fetch = [&](const std::string& name, Mat<T>& dst) {
    const auto* t = ck.find(name);
    if (!t) throw LoadError("checkpoint lacks tensor '" + name + "'");
    if (t->rows != dst.rows() || t->cols != dst.cols())
      throw LoadError("tensor '" + name + "' has shape " + std::to_string(t->rows) + "x" + std::to_string(t->cols) +
                      ", expected " + std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
    dst = tensor_to_mat<T>(*t);
  };
  for_each_tensor([&](const std::string& name, Mat<T>& p) { fetch("params." + name, p); }, s.model.params);
  for_each_tensor([&](const std::string& name, Mat<T>& p) { fetch("adam_m." + name, p); }, s.optimizer.m);
  for_each_tensor([&](const std::string& name, Mat<T>& p) { fetch("adam_v." + name, p); }, s.optimizer.v);
  auto f64 = [&](const std::string& name) {
    const auto* t = ck.find(name);
    if (!t) throw LoadError("checkpoint lacks tensor '" + name + "'");
    return tensor_to_mat<double>(*t);
  };
  const auto scalars = f64("threshold.scalars");
  if (scalars.size() != 2) throw LoadError("threshold scalars have the wrong size");
  s.threshold.tau_global = scalars(0, 0);
  s.threshold.momentum = scalars(0, 1);
  const auto nu = f64("threshold.nu");
  if (nu.cols() != s.model.config.num_classes) throw LoadError("threshold state class count differs from model");
  s.threshold.nu_local.assign(nu.data(), nu.data() + nu.size());
  const auto opt = f64("optimizer.config");
  if (opt.size() != 8) throw LoadError("optimizer config has the wrong size");
  auto& oc = s.optimizer.config;
  oc.learning_rate = opt(0, 0);
  oc.weight_decay = opt(0, 1);
  oc.beta1 = opt(0, 2);
  oc.beta2 = opt(0, 3);
  oc.eps = opt(0, 4);
  oc.warmup_fraction = opt(0, 5);
  oc.min_lr_fraction = opt(0, 6);
  oc.grad_clip = opt(0, 7);
  return s;
}

}  // namespace maskmatch
