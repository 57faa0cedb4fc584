#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "support.hpp"

using namespace maskmatch;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_synthetic(int classes, int labels_per_class, std::uint64_t seed = 0) {
  DatasetSpec s;
  s.num_classes = classes;
  s.labels_per_class = labels_per_class;
  s.image_size = 8;
  s.train_per_class = 20;
  s.test_per_class = 5;
  s.seed = seed;
  return s;
}

Image gradient_image(int h, int w, int c, float offset) {
  Image img(h, w, c);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = std::fmod(offset + 0.013f * static_cast<float>(i), 1.0f);
  return img;
}

// 24-bit bottom-up BMP, written byte by byte.
void write_bmp24(const fs::path& path, const Image& img) {
  const std::uint32_t stride = (static_cast<std::uint32_t>(img.width) * 3 + 3) & ~3u;
  const std::uint32_t data = stride * static_cast<std::uint32_t>(img.height);
  std::vector<unsigned char> b;
  auto u16 = [&](std::uint16_t v) { b.push_back(v & 0xff); b.push_back(v >> 8); };
  auto u32 = [&](std::uint32_t v) { for (int k = 0; k < 4; ++k) b.push_back((v >> (8 * k)) & 0xff); };
  b.push_back('B');
  b.push_back('M');
  u32(54 + data);
  u32(0);
  u32(54);
  u32(40);
  u32(static_cast<std::uint32_t>(img.width));
  u32(static_cast<std::uint32_t>(img.height));
  u16(1);
  u16(24);
  u32(0);
  u32(data);
  u32(2835);
  u32(2835);
  u32(0);
  u32(0);
  for (int y = img.height - 1; y >= 0; --y) {
    std::uint32_t written = 0;
    for (int x = 0; x < img.width; ++x) {
      for (int c = 2; c >= 0; --c) b.push_back(static_cast<unsigned char>(std::lround(img.at(y, x, c) * 255.0f)));
      written += 3;
    }
    for (; written < stride; ++written) b.push_back(0);
  }
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Image quantized(Image img) {
  for (auto& p : img.pixels) p = static_cast<float>(std::lround(p * 255.0f)) / 255.0f;
  return img;
}

}  // namespace

TEST(SyntheticDataset, SizesAndBalance) {
  const auto [train, test] = generate_synthetic_dataset(4, 500, 8, 1, 3);
  EXPECT_EQ(train.size(), 2000u);
  EXPECT_EQ(test.size(), 12u);
  std::map<int, int> hist;
  for (int l : train.labels) ++hist[l];
  for (int c = 0; c < 4; ++c) EXPECT_EQ(hist[c], 500);

  const auto [tiny, none] = generate_synthetic_dataset(2, 1, 8, 1);
  EXPECT_EQ(tiny.size(), 2u);
  EXPECT_EQ(none.size(), 0u);
}

TEST(SyntheticDataset, SameSeedIsBitIdentical) {
  const auto a = generate_synthetic_dataset(3, 4, 16, 42, 2);
  const auto b = generate_synthetic_dataset(3, 4, 16, 42, 2);
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i) EXPECT_EQ(a.first.images[i], b.first.images[i]);
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_EQ(a.second.images[i], b.second.images[i]);
  const auto c = generate_synthetic_dataset(3, 4, 16, 43, 2);
  EXPECT_NE(a.first.images[0], c.first.images[0]);
}

TEST(SyntheticDataset, PixelsInUnitRange) {
  const auto [train, test] = generate_synthetic_dataset(10, 3, 16, 5, 1);
  for (const auto* pool : {&train, &test})
    for (const auto& img : pool->images)
      for (float p : img.pixels) {
        EXPECT_GE(p, 0.0f);
        EXPECT_LE(p, 1.0f);
      }
}

TEST(SyntheticDataset, RejectsInvalidParameters) {
  EXPECT_THROW(generate_synthetic_dataset(1, 5, 8, 0), ConfigError);
  EXPECT_THROW(generate_synthetic_dataset(2, 0, 8, 0), ConfigError);
}

TEST(LoadDataset, LabeledPoolIsClassBalanced) {
  const auto pools = load_dataset(small_synthetic(4, 4));
  EXPECT_EQ(pools.num_classes, 4);
  EXPECT_EQ(pools.labeled.size(), 16u);
  std::map<int, int> hist;
  for (int l : pools.labeled.labels) ++hist[l];
  for (int c = 0; c < 4; ++c) EXPECT_EQ(hist[c], 4);
}

TEST(LoadDataset, HundredClassesTwoLabelsEach) {
  DatasetSpec s = small_synthetic(100, 2);
  s.train_per_class = 3;
  s.test_per_class = 1;
  EXPECT_EQ(load_dataset(s).labeled.size(), 200u);
}

TEST(LoadDataset, UnlabeledPoolIsWholeTrainingPool) {
  const auto pools = load_dataset(small_synthetic(4, 4));
  EXPECT_EQ(pools.unlabeled.size(), 80u);
  for (int l : pools.unlabeled.labels) EXPECT_EQ(l, -1);
  // labeled images also appear unlabeled, under the same id
  std::set<std::uint64_t> ids(pools.unlabeled.ids.begin(), pools.unlabeled.ids.end());
  EXPECT_EQ(ids.size(), pools.unlabeled.size());
  for (std::size_t i = 0; i < pools.labeled.size(); ++i) {
    const auto id = pools.labeled.ids[i];
    ASSERT_TRUE(ids.count(id));
    EXPECT_EQ(pools.unlabeled.images[id], pools.labeled.images[i]);
  }
}

TEST(LoadDataset, SameSeedSameLabeledIds) {
  const auto a = load_dataset(small_synthetic(4, 4, 9));
  const auto b = load_dataset(small_synthetic(4, 4, 9));
  EXPECT_EQ(a.labeled.ids, b.labeled.ids);
}

TEST(LoadDataset, TooManyLabelsPerClassIsConfigError) {
  EXPECT_THROW(load_dataset(small_synthetic(4, 21)), ConfigError);
  EXPECT_THROW(load_dataset(small_synthetic(4, 0)), ConfigError);
}

TEST(BatchIterator, DropsPartialTail) {
  BatchIterator it(10, 3, 7, 1);
  EXPECT_EQ(it.batches_per_epoch(), 3u);
  std::set<std::size_t> seen;
  int batches = 0;
  while (auto b = it.next()) {
    ++batches;
    ASSERT_EQ(b->size(), 3u);
    for (auto i : *b) EXPECT_TRUE(seen.insert(i).second) << "duplicate within epoch";
  }
  EXPECT_EQ(batches, 3);
  EXPECT_EQ(seen.size(), 9u);
}

TEST(BatchIterator, FullBatchContainsEverything) {
  BatchIterator it(10, 10, 3, 1);
  auto b = it.next();
  ASSERT_TRUE(b);
  std::set<std::size_t> s(b->begin(), b->end());
  EXPECT_EQ(s.size(), 10u);
  EXPECT_FALSE(it.next());
}

TEST(BatchIterator, EpochOrderingsDiffer) {
  BatchIterator it(50, 50, 11);
  const auto e1 = it.batch(0);
  const auto e2 = it.batch(1);
  EXPECT_NE(e1, e2);
  // each epoch is the permutation obtained from its own derived stream
  std::vector<std::size_t> oracle(50);
  for (std::size_t i = 0; i < 50; ++i) oracle[i] = i;
  Rng rng(derive_seed(11, Stream::epoch_shuffle, 1));
  rng.shuffle(oracle.begin(), oracle.end());
  EXPECT_EQ(e2, oracle);
}

TEST(BatchIterator, DeterministicAndRandomAccess) {
  BatchIterator a(37, 5, 99), b(37, 5, 99);
  std::vector<std::vector<std::size_t>> seq;
  for (int k = 0; k < 20; ++k) seq.push_back(*a.next());
  for (int k = 19; k >= 0; --k) EXPECT_EQ(b.batch(static_cast<std::size_t>(k)), seq[static_cast<std::size_t>(k)]);
}

TEST(BatchIterator, OversizedBatchIsConfigError) {
  EXPECT_THROW(BatchIterator(4, 5, 0), ConfigError);
  EXPECT_THROW(BatchIterator(4, 0, 0), ConfigError);
}

TEST(RawTensorFile, RoundTripAndIngestion) {
  const auto dir = mmtest::scratch_dir("mmrt");
  RawTensorFile f;
  f.height = f.width = 4;
  f.channels = 3;
  f.num_classes = 2;
  for (int i = 0; i < 10; ++i) {
    f.images.push_back(gradient_image(4, 4, 3, 0.05f * static_cast<float>(i)));
    f.labels.push_back(i == 9 ? kUnlabeled : static_cast<std::uint16_t>(i % 2));
  }
  write_raw_tensor_file(dir / "train.mmrt", f);
  const auto g = read_raw_tensor_file(dir / "train.mmrt");
  EXPECT_EQ(g.images, f.images);
  EXPECT_EQ(g.labels, f.labels);

  DatasetSpec s;
  s.source = DataSource::raw;
  s.path = (dir / "train.mmrt").string();
  s.num_classes = 0;
  s.labels_per_class = 2;
  s.test_fraction = 0.25;
  const auto pools = load_dataset(s);
  EXPECT_EQ(pools.num_classes, 2);
  EXPECT_EQ(pools.labeled.size(), 4u);
  EXPECT_EQ(pools.unlabeled.size() + pools.test.size(), 10u);
  for (int l : pools.test.labels) EXPECT_GE(l, 0);
}

TEST(RawTensorFile, CorruptionIsIngestionError) {
  const auto dir = mmtest::scratch_dir("mmrt_bad");
  RawTensorFile f;
  f.height = f.width = 2;
  f.channels = 1;
  f.num_classes = 2;
  f.images.push_back(Image(2, 2, 1, 0.5f));
  f.labels.push_back(0);
  write_raw_tensor_file(dir / "ok.mmrt", f);
  auto bytes = detail::read_file_bytes(dir / "ok.mmrt");

  auto write = [&](const std::string& name, const std::vector<unsigned char>& b) {
    std::ofstream(dir / name, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    return dir / name;
  };
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(read_raw_tensor_file(write("short.mmrt", truncated)), IngestionError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(read_raw_tensor_file(write("magic.mmrt", magic)), IngestionError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(read_raw_tensor_file(write("version.mmrt", version)), IngestionError);
  EXPECT_THROW(read_raw_tensor_file(dir / "missing.mmrt"), IngestionError);

  DatasetSpec s;
  s.source = DataSource::raw;
  s.path = (dir / "missing.mmrt").string();
  EXPECT_THROW(load_dataset(s), IngestionError);
}

TEST(ImageReaders, PnmAndBmpRoundTrip) {
  const auto dir = mmtest::scratch_dir("readers");
  const Image rgb = quantized(gradient_image(5, 3, 3, 0.1f));
  const Image gray = quantized(gradient_image(4, 6, 1, 0.2f));
  write_pnm(dir / "a.ppm", rgb);
  write_pnm(dir / "b.pgm", gray);
  write_bmp24(dir / "c.bmp", rgb);
  EXPECT_EQ(read_image(dir / "a.ppm"), rgb);
  EXPECT_EQ(read_image(dir / "b.pgm"), gray);
  EXPECT_EQ(read_image(dir / "c.bmp"), rgb);

  std::ofstream(dir / "junk.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_image(dir / "junk.ppm"), IngestionError);
}

TEST(FolderSource, ClassDirectoriesWithHoldout) {
  const auto dir = mmtest::scratch_dir("folder");
  for (const std::string cls : {"cat", "dog", "eel"}) {
    fs::create_directories(dir / cls);
    for (int i = 0; i < 5; ++i)
      write_pnm(dir / cls / ("img" + std::to_string(i) + ".ppm"), quantized(gradient_image(4, 4, 3, 0.1f * static_cast<float>(i))));
  }
  DatasetSpec s;
  s.source = DataSource::folder;
  s.path = dir.string();
  s.num_classes = 0;
  s.labels_per_class = 2;
  s.test_fraction = 0.2;
  const auto pools = load_dataset(s);
  EXPECT_EQ(pools.num_classes, 3);
  EXPECT_EQ(pools.labeled.size(), 6u);
  EXPECT_EQ(pools.test.size(), 3u);
  EXPECT_EQ(pools.unlabeled.size(), 12u);

  s.num_classes = 5;
  EXPECT_THROW(load_dataset(s), ConfigError);
  s.path = (dir / "nope").string();
  EXPECT_THROW(load_dataset(s), IngestionError);
}

TEST(FolderSource, ExplicitSplitWithDisjointUnlabeled) {
  const auto dir = mmtest::scratch_dir("folder_split");
  for (const std::string split : {"train", "test"})
    for (const std::string cls : {"a", "b"}) {
      fs::create_directories(dir / split / cls);
      for (int i = 0; i < 3; ++i)
        write_pnm(dir / split / cls / (std::to_string(i) + ".ppm"), Image(4, 4, 3, 0.25f));
    }
  fs::create_directories(dir / "unlabeled");
  for (int i = 0; i < 4; ++i) write_pnm(dir / "unlabeled" / (std::to_string(i) + ".ppm"), Image(4, 4, 3, 0.5f));
  DatasetSpec s;
  s.source = DataSource::folder;
  s.path = dir.string();
  s.num_classes = 0;
  s.labels_per_class = 1;
  const auto pools = load_dataset(s);
  EXPECT_EQ(pools.num_classes, 2);
  EXPECT_EQ(pools.test.size(), 6u);
  EXPECT_EQ(pools.unlabeled.size(), 10u);
}
