#include <gtest/gtest.h>

#include "support.hpp"

using namespace maskmatch;

namespace {

AugmentationPolicy degenerate_policy() {
  AugmentationPolicy p;
  p.crop_padding = 0;
  p.flip_probability = 0.0;
  p.strong_ops = {default_op_range(StrongOp::identity)};
  return p;
}

void expect_unit_range(const Image& img) {
  for (float v : img.pixels) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

}  // namespace

TEST(WeakAugment, DegeneratePolicyIsIdentity) {
  Rng data(1), rng(2);
  const auto img = mmtest::random_image(8, 12, 3, data);
  const auto p = degenerate_policy();
  EXPECT_EQ(weak_augment(img, p, rng), img);
  EXPECT_EQ(strong_augment(img, p, rng), img);
}

TEST(WeakAugment, ShapeAndRangePreserved) {
  Rng data(3), rng(4);
  AugmentationPolicy p;
  for (int k = 0; k < 50; ++k) {
    const auto img = mmtest::random_image(16, 16, 3, data);
    const auto out = weak_augment(img, p, rng);
    EXPECT_TRUE(out.same_shape(img));
    expect_unit_range(out);
  }
}

TEST(WeakAugment, SeededReplay) {
  Rng data(5);
  const auto img = mmtest::random_image(16, 16, 3, data);
  AugmentationPolicy p;
  Rng a(77), b(77);
  EXPECT_EQ(weak_augment(img, p, a), weak_augment(img, p, b));
}

TEST(WeakAugment, FlipOnlyMirrorsColumns) {
  Rng data(6), rng(0);
  const auto img = mmtest::random_image(4, 5, 2, data);
  AugmentationPolicy p;
  p.crop_padding = 0;
  p.flip_probability = 1.0;
  const auto out = weak_augment(img, p, rng);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 2; ++c) EXPECT_EQ(out.at(y, x, c), img.at(y, 4 - x, c));
}

TEST(StrongAugment, EveryOpPreservesShapeAndRange) {
  Rng data(7), rng(8);
  for (int op = 0; op <= static_cast<int>(StrongOp::translate_x); ++op) {
    AugmentationPolicy p;
    p.strong_ops = {default_op_range(static_cast<StrongOp>(op))};
    for (int k = 0; k < 20; ++k) {
      const auto img = mmtest::random_image(16, 16, 3, data);
      const auto out = strong_augment(img, p, rng);
      EXPECT_TRUE(out.same_shape(img)) << to_string(static_cast<StrongOp>(op));
      expect_unit_range(out);
    }
  }
}

TEST(StrongAugment, IdentityPoolEqualsWeakPass) {
  Rng data(9);
  const auto img = mmtest::random_image(16, 16, 3, data);
  AugmentationPolicy p;
  p.strong_ops = {default_op_range(StrongOp::identity)};
  Rng a(10), b(10);
  const auto strong = strong_augment(img, p, a);
  const auto weak = weak_augment(img, p, b);
  EXPECT_EQ(strong, weak);
}

TEST(StrongAugment, EmptyPoolIsConfigError) {
  AugmentationPolicy p;
  p.strong_ops.clear();
  Rng rng(0);
  EXPECT_THROW(strong_augment(Image(4, 4, 3), p, rng), ConfigError);
}

TEST(StrongAugment, OpSelectionFrequency) {
  AugmentationPolicy p;
  ASSERT_EQ(p.strong_ops.size(), 8u);
  ASSERT_EQ(p.strong_ops_per_image, 2);
  Rng rng(12);
  constexpr int kDraws = 10000;
  std::vector<int> counts(8, 0);
  for (int k = 0; k < kDraws; ++k)
    for (auto idx : sample_strong_ops(p, rng)) ++counts[idx];
  // share of images in which an op is drawn, counted per slot: 2 slots x 1/8
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / kDraws, 2.0 / 8.0, 0.02);
}

TEST(AugmentationPolicy, Validation) {
  AugmentationPolicy p;
  p.flip_probability = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.strong_ops_per_image = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(parse_strong_op("cutout"), ConfigError);
}

TEST(Patchify, CountsAndLayout) {
  Rng data(13);
  const auto img = mmtest::random_image(32, 32, 3, data);
  const auto p = patchify<float>(img, 4);
  EXPECT_EQ(p.rows(), 64);
  EXPECT_EQ(p.cols(), 48);
  // patch (gy=1, gx=2), element (py=3, px=1, c=2)
  EXPECT_EQ(p(1 * 8 + 2, (3 * 4 + 1) * 3 + 2), img.at(4 + 3, 8 + 1, 2));

  Image tiny(2, 2, 1);
  tiny.pixels = {0.1f, 0.2f, 0.3f, 0.4f};
  const auto q = patchify<float>(tiny, 2);
  ASSERT_EQ(q.rows(), 1);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(q(0, k), tiny.pixels[static_cast<std::size_t>(k)]);
}

TEST(Patchify, RoundTrips) {
  Rng data(14);
  for (int k = 0; k < 10; ++k) {
    const auto img = mmtest::random_image(12, 8, 3, data);
    EXPECT_EQ(unpatchify(patchify<float>(img, 4), 4, 12, 8, 3), img);
  }
  for (int k = 0; k < 10; ++k) {
    Mat<float> p(6, 48);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(data.uniform());
    EXPECT_EQ(patchify<float>(unpatchify(p, 4, 12, 8, 3), 4), p);
  }
  const auto zero = unpatchify(Mat<float>(Mat<float>::Zero(4, 12)), 2, 4, 4, 3);
  for (float v : zero.pixels) EXPECT_EQ(v, 0.0f);
}

TEST(Patchify, ShapeErrors) {
  EXPECT_THROW(patchify<float>(Image(10, 8, 3), 4), ShapeError);
  EXPECT_THROW(unpatchify(Mat<float>(Mat<float>::Zero(3, 48)), 4, 8, 8, 3), ShapeError);
  EXPECT_THROW(unpatchify(Mat<float>(Mat<float>::Zero(4, 47)), 4, 8, 8, 3), ShapeError);
}
