#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/image_io.hpp"
#include "maskmatch/rng.hpp"

namespace maskmatch {

/// Images with optional class labels (-1 = unlabeled) and stable ids.
struct Pool {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return images.size(); }
  void push(Image img, int label, std::uint64_t id) {
    images.push_back(std::move(img));
    labels.push_back(label);
    ids.push_back(id);
  }
};

struct DatasetPools {
  int num_classes = 0;
  Pool labeled;
  Pool unlabeled;
  Pool test;
};

/// A labeled minibatch; labels are class indices (one-hot implied).
struct LabeledBatch {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return images.size(); }
};

struct UnlabeledBatch {
  std::vector<Image> images;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return images.size(); }
};

enum class DataSource { synthetic, folder, raw };

inline std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::folder: return "folder";
    case DataSource::raw: return "raw";
  }
  return "?";
}

inline DataSource parse_data_source(const std::string& s) {
  if (s == "synthetic") return DataSource::synthetic;
  if (s == "folder") return DataSource::folder;
  if (s == "raw") return DataSource::raw;
  throw ConfigError("unknown dataset source '" + s + "'");
}

struct DatasetSpec {
  DataSource source = DataSource::synthetic;
  /// Folder root, or MMRT training file.
  std::string path;
  /// Optional MMRT test file; when empty a stratified holdout is used.
  std::string test_path;
  /// Required for the synthetic source; for other sources 0 means "from data".
  int num_classes = 4;
  int labels_per_class = 4;
  std::uint64_t seed = 0;
  // synthetic source only
  int image_size = 32;
  int train_per_class = 500;
  int test_per_class = 250;
  /// Fraction of each class held out for testing when no explicit test split exists.
  double test_fraction = 0.2;
};

// ---------------------------------------------------------------------------
// Procedural shapes

inline constexpr int kShapeFamilies = 8;

namespace detail {

// Membership test in shape-normalized coordinates (unit radius around center).
inline bool inside_shape(int family, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  if (au > 1.0 || av > 1.0) return false;
  switch (family) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return au <= 0.8 && av <= 0.8;
    case 2: return v >= -0.9 && v <= 0.8 && au <= 0.9 * (v + 0.9) / 1.7;
    case 3: return (au <= 0.3) || (av <= 0.3);
    case 4: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case 5: return static_cast<int>(std::floor((v + 1.0) * 2.0)) % 2 == 0;
    case 6: return std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35;
    case 7: return static_cast<int>(std::floor((u + 1.0) * 2.0)) % 2 == 0;
    default: return false;
  }
}

inline Image render_shape(int cls, int size, Rng& rng) {
  Image img(size, size, 3);
  // dark, low-saturation background; bright foreground of random hue
  float bg[3], fg[3];
  const double bg_level = rng.uniform(0.0, 0.3);
  for (auto& c : bg) c = static_cast<float>(std::clamp(bg_level + rng.uniform(-0.08, 0.08), 0.0, 1.0));
  const int group = cls / kShapeFamilies;
  for (int c = 0; c < 3; ++c) fg[c] = static_cast<float>(rng.uniform(0.45, 1.0));
  // classes beyond the base families carry a fixed dominant channel
  if (group > 0) fg[(group - 1) % 3] = 1.0f;
  const double radius = rng.uniform(0.3, 0.45) * size;
  const double lo = radius, hi = size - radius;
  const double cx = hi > lo ? rng.uniform(lo, hi) : size / 2.0;
  const double cy = hi > lo ? rng.uniform(lo, hi) : size / 2.0;
  const int family = cls % kShapeFamilies;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in = inside_shape(family, (x + 0.5 - cx) / radius, (y + 0.5 - cy) / radius);
      for (int c = 0; c < 3; ++c) {
        const double noise = 0.04 * rng.normal();
        img.at(y, x, c) = static_cast<float>(std::clamp((in ? fg[c] : bg[c]) + noise, 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace detail

/// Class-balanced procedural dataset of colored shapes; one shape family per
/// class. Returns {train, test} pools with labels attached.
inline std::pair<Pool, Pool> generate_synthetic_dataset(int num_classes, int per_class,
                                                        int image_size, std::uint64_t seed,
                                                        int test_per_class = 0) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (per_class < 1 || test_per_class < 0) throw ConfigError("per-class counts must be positive");
  if (image_size < 4) throw ConfigError("image size too small");
  auto make = [&](int count, std::uint64_t split) {
    Pool pool;
    std::uint64_t id = 0;
    // interleave classes so that pool order carries no class blocks
    for (int i = 0; i < count; ++i)
      for (int c = 0; c < num_classes; ++c) {
        Rng rng(derive_seed(seed, Stream::render, split, c, i));
        pool.push(detail::render_shape(c, image_size, rng), c, id++);
      }
    return pool;
  };
  return {make(per_class, 0), make(test_per_class, 1)};
}

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir,
                                                         bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path())))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Appends a per-class holdout of `fraction` of each class from `train` to `test`.
inline void stratified_holdout(Pool& train, Pool& test, int num_classes, double fraction,
                               std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) throw ConfigError("test fraction must be in (0,1)");
  std::vector<bool> held(train.size(), false);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.labels[i] == c) idx.push_back(i);
    if (idx.size() < 2) continue;
    Rng rng(derive_seed(seed, Stream::holdout, c));
    rng.shuffle(idx.begin(), idx.end());
    auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    n = std::clamp<std::size_t>(n, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n; ++k) held[idx[k]] = true;
  }
  Pool kept;
  std::uint64_t test_id = test.size();
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (held[i]) test.push(std::move(train.images[i]), train.labels[i], test_id++);
    else kept.push(std::move(train.images[i]), train.labels[i], kept.size());
  }
  train = std::move(kept);
}

inline std::pair<Pool, Pool> load_folder(const DatasetSpec& spec, int& num_classes) {
  namespace fs = std::filesystem;
  const fs::path root(spec.path);
  if (!fs::is_directory(root)) throw IngestionError("dataset folder not found: " + spec.path);
  const bool split = fs::is_directory(root / "train");
  const fs::path train_dir = split ? root / "train" : root;
  const auto class_dirs = sorted_entries(train_dir, true);
  std::vector<std::string> class_names;
  for (const auto& d : class_dirs) {
    const auto name = d.filename().string();
    if (!split || (name != "test" && name != "unlabeled")) class_names.push_back(name);
  }
  if (class_names.size() < 2) throw IngestionError("dataset folder needs at least 2 class directories");
  num_classes = static_cast<int>(class_names.size());

  auto load_classes = [&](const fs::path& dir, Pool& pool) {
    for (int c = 0; c < num_classes; ++c) {
      const fs::path cdir = dir / class_names[c];
      if (!fs::is_directory(cdir)) throw IngestionError("missing class directory " + cdir.string());
      for (const auto& f : sorted_entries(cdir, false)) pool.push(read_image(f), c, pool.size());
    }
  };
  Pool train, test;
  load_classes(train_dir, train);
  if (split) {
    if (!fs::is_directory(root / "test")) throw IngestionError("split folder lacks test/");
    load_classes(root / "test", test);
    if (fs::is_directory(root / "unlabeled"))
      for (const auto& f : sorted_entries(root / "unlabeled", false))
        train.push(read_image(f), -1, train.size());
  } else {
    stratified_holdout(train, test, num_classes, spec.test_fraction, spec.seed);
  }
  return {std::move(train), std::move(test)};
}

inline Pool pool_from_raw(const RawTensorFile& f) {
  Pool p;
  for (std::size_t i = 0; i < f.images.size(); ++i)
    p.push(f.images[i], f.labels[i] == kUnlabeled ? -1 : f.labels[i], i);
  return p;
}

inline void check_uniform_shapes(const Pool& a, const Pool& b) {
  const Image* ref = !a.images.empty() ? &a.images.front() : nullptr;
  if (!ref) throw IngestionError("training pool is empty");
  for (const auto* pool : {&a, &b})
    for (const auto& img : pool->images)
      if (!img.same_shape(*ref)) throw IngestionError("images in dataset differ in shape");
}

}  // namespace detail

/// Builds the labeled, unlabeled and test pools. The labeled pool holds exactly
/// labels_per_class examples of each class; every training image (labeled or
/// not) also appears in the unlabeled pool.
inline DatasetPools load_dataset(const DatasetSpec& spec) {
  if (spec.labels_per_class < 1) throw ConfigError("labels_per_class must be >= 1");
  Pool train, test;
  int num_classes = spec.num_classes;
  switch (spec.source) {
    case DataSource::synthetic: {
      if (spec.num_classes < 2) throw ConfigError("num_classes must be >= 2");
      std::tie(train, test) = generate_synthetic_dataset(spec.num_classes, spec.train_per_class,
                                                         spec.image_size, spec.seed,
                                                         spec.test_per_class);
      break;
    }
    case DataSource::folder: {
      std::tie(train, test) = detail::load_folder(spec, num_classes);
      break;
    }
    case DataSource::raw: {
      const auto train_file = read_raw_tensor_file(spec.path);
      num_classes = train_file.num_classes;
      train = detail::pool_from_raw(train_file);
      if (!spec.test_path.empty()) {
        const auto test_file = read_raw_tensor_file(spec.test_path);
        if (test_file.num_classes != num_classes)
          throw IngestionError("train/test class counts differ");
        test = detail::pool_from_raw(test_file);
        for (int l : test.labels)
          if (l < 0) throw IngestionError("test file contains unlabeled entries");
      } else {
        detail::stratified_holdout(train, test, num_classes, spec.test_fraction, spec.seed);
      }
      break;
    }
  }
  if (spec.source != DataSource::synthetic && spec.num_classes != 0 && spec.num_classes != num_classes)
    throw ConfigError("dataset has " + std::to_string(num_classes) + " classes, config expects " +
                      std::to_string(spec.num_classes));
  detail::check_uniform_shapes(train, test);

  DatasetPools out;
  out.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.labels[i] == c) idx.push_back(i);
    if (static_cast<int>(idx.size()) < spec.labels_per_class)
      throw ConfigError("class " + std::to_string(c) + " has only " + std::to_string(idx.size()) +
                        " examples, labels_per_class=" + std::to_string(spec.labels_per_class));
    Rng rng(derive_seed(spec.seed, Stream::labeled_sampling, c));
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(static_cast<std::size_t>(spec.labels_per_class));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.labeled.push(train.images[i], c, train.ids[i]);
  }
  out.unlabeled = Pool{};
  for (std::size_t i = 0; i < train.size(); ++i)
    out.unlabeled.push(std::move(train.images[i]), -1, train.ids[i]);
  out.test = std::move(test);
  return out;
}

// ---------------------------------------------------------------------------
// Batching

/// Epoch-shuffled index stream over a pool of `pool_size` examples. Each epoch
/// uses a permutation derived from (seed, epoch); the tail that does not fill a
/// whole batch is dropped. Random access by batch index makes resuming exact.
class BatchIterator {
 public:
  /// epochs == 0 means an unbounded stream.
  BatchIterator(std::size_t pool_size, std::size_t batch_size, std::uint64_t seed,
                std::size_t epochs = 0)
      : pool_size_(pool_size), batch_size_(batch_size), seed_(seed), epochs_(epochs) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (batch_size > pool_size)
      throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds pool size " +
                        std::to_string(pool_size));
  }

  std::size_t batches_per_epoch() const { return pool_size_ / batch_size_; }
  std::size_t position() const { return next_; }
  void seek(std::size_t batch_index) { next_ = batch_index; }

  bool done() const { return epochs_ != 0 && next_ >= epochs_ * batches_per_epoch(); }

  std::optional<std::vector<std::size_t>> next() {
    if (done()) return std::nullopt;
    auto b = batch(next_);
    ++next_;
    return b;
  }

  /// Indices of batch number `k` of the stream.
  std::vector<std::size_t> batch(std::size_t k) {
    const std::size_t epoch = k / batches_per_epoch();
    const std::size_t within = k % batches_per_epoch();
    if (!perm_epoch_ || *perm_epoch_ != epoch) {
      perm_.resize(pool_size_);
      for (std::size_t i = 0; i < pool_size_; ++i) perm_[i] = i;
      Rng rng(derive_seed(seed_, Stream::epoch_shuffle, epoch));
      rng.shuffle(perm_.begin(), perm_.end());
      perm_epoch_ = epoch;
    }
    return {perm_.begin() + static_cast<std::ptrdiff_t>(within * batch_size_),
            perm_.begin() + static_cast<std::ptrdiff_t>((within + 1) * batch_size_)};
  }

 private:
  std::size_t pool_size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epochs_;
  std::size_t next_ = 0;
  std::vector<std::size_t> perm_;
  std::optional<std::size_t> perm_epoch_;
};

inline LabeledBatch gather_labeled(const Pool& pool, const std::vector<std::size_t>& idx) {
  LabeledBatch b;
  for (auto i : idx) {
    b.images.push_back(pool.images[i]);
    b.labels.push_back(pool.labels[i]);
    b.ids.push_back(pool.ids[i]);
  }
  return b;
}

inline UnlabeledBatch gather_unlabeled(const Pool& pool, const std::vector<std::size_t>& idx) {
  UnlabeledBatch b;
  for (auto i : idx) {
    b.images.push_back(pool.images[i]);
    b.ids.push_back(pool.ids[i]);
  }
  return b;
}

}  // namespace maskmatch
