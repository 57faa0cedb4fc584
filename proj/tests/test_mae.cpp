#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace maskmatch;

TEST(MaskingPlan, CountsOverGrid) {
  for (double r : {0.15, 0.3, 0.5, 0.7})
    for (int n : {4, 64, 196}) {
      const int expected = std::clamp(static_cast<int>(std::floor(r * n + 0.5)), 1, n - 1);
      EXPECT_EQ(masked_count(n, r), expected) << r << " " << n;
      Rng rng(static_cast<std::uint64_t>(n));
      const auto plan = make_masking_plan(n, r, rng);
      EXPECT_EQ(static_cast<int>(plan.masked.size()), expected);
      EXPECT_EQ(plan.visible().size() + plan.masked.size(), static_cast<std::size_t>(n));
    }
  EXPECT_EQ(masked_count(64, 0.3), 19);
  EXPECT_EQ(masked_count(2, 0.01), 1);
  EXPECT_EQ(masked_count(2, 0.99), 1);
}

TEST(MaskingPlan, Preconditions) {
  Rng rng(0);
  EXPECT_THROW(make_masking_plan(1, 0.5, rng), PreconditionError);
  EXPECT_THROW(make_masking_plan(8, 0.0, rng), ConfigError);
  EXPECT_THROW(make_masking_plan(8, 1.0, rng), ConfigError);
}

TEST(MaskingPlan, UniformMarginals) {
  Rng rng(1);
  constexpr int kPlans = 100000;
  std::vector<int> counts(10, 0);
  for (int k = 0; k < kPlans; ++k) {
    const auto plan = make_masking_plan(10, 0.5, rng);
    for (int i : plan.masked) ++counts[static_cast<std::size_t>(i)];
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / kPlans, 0.5, 0.01);
}

TEST(MaskingPlan, DistinctSortedInRange) {
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const auto plan = make_masking_plan(49, 0.3, rng);
    for (std::size_t i = 0; i < plan.masked.size(); ++i) {
      EXPECT_GE(plan.masked[i], 0);
      EXPECT_LT(plan.masked[i], 49);
      if (i > 0) {
        EXPECT_LT(plan.masked[i - 1], plan.masked[i]);
      }
    }
  }
}

TEST(NormalizePatch, Examples) {
  const std::vector<double> a = {1.0, 3.0};
  const auto na = normalize_patch<double>(a);
  EXPECT_NEAR(na[0], -1.0, 1e-12);
  EXPECT_NEAR(na[1], 1.0, 1e-12);
  const std::vector<double> b = {0.5, 0.5};
  const auto nb = normalize_patch<double>(b);
  EXPECT_EQ(nb[0], 0.0);
  EXPECT_EQ(nb[1], 0.0);
  EXPECT_THROW(normalize_patch<double>(std::span<const double>{}), PreconditionError);

  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> p(48);
    for (auto& v : p) v = rng.uniform();
    const auto n = normalize_patch<double>(p);
    EXPECT_NEAR(std::accumulate(n.begin(), n.end(), 0.0) / 48.0, 0.0, 1e-6);
  }
}

TEST(MaeLoss, HandArithmetic) {
  Mat<double> target(2, 2), recon = Mat<double>::Zero(2, 2);
  target << 1.0, 3.0, 7.0, 9.0;
  recon(1, 0) = 123.0;  // unmasked, must not matter
  const MaskingPlan plan{{0}, 2, 0.5};
  EXPECT_NEAR(mae_loss(target, recon, plan, false), 5.0, 1e-9);
  EXPECT_NEAR(mae_loss(target, recon, plan, true), 1.0, 1e-9);
  EXPECT_EQ(mae_loss(target, target, plan, false), 0.0);
}

TEST(MaeLoss, UnmaskedPositionsHaveNoInfluence) {
  Rng rng(4);
  Mat<double> target(16, 12), recon(16, 12);
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    target.data()[i] = rng.uniform();
    recon.data()[i] = rng.uniform();
  }
  const auto plan = make_masking_plan(16, 0.3, rng);
  Mat<double> grad;
  const double base = mae_loss(target, recon, plan, true, &grad);
  for (int k : plan.visible()) {
    EXPECT_TRUE(grad.row(k).isZero(0.0));
    auto bumped = recon;
    bumped.row(k).array() += 10.0;
    EXPECT_EQ(mae_loss(target, bumped, plan, true), base);
  }
  EXPECT_GE(base, 0.0);
}

TEST(MaeLoss, ShapeErrors) {
  const MaskingPlan plan{{0}, 2, 0.5};
  EXPECT_THROW(mae_loss(Mat<double>(Mat<double>::Zero(2, 3)), Mat<double>(Mat<double>::Zero(2, 2)), plan, false), ShapeError);
  EXPECT_THROW(mae_loss(Mat<double>(Mat<double>::Zero(3, 2)), Mat<double>(Mat<double>::Zero(3, 2)), plan, false), ShapeError);
}

TEST(MaeForward, ZeroWhenDecoderEmitsTargets) {
  // a decoder whose prediction head ignores its input and outputs a constant
  // patch reconstructs a constant image exactly
  auto m = init_params<double>(mmtest::toy_config(), 0);
  m.params.decoder_pred.w.setZero();
  m.params.decoder_pred.b.setConstant(0.25);
  const std::vector<Image> images(3, Image(8, 8, 3, 0.25f));
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  EXPECT_NEAR(mae_forward(m, std::span<const Image>(images), 0.5, false, std::span<const std::uint64_t>(seeds)), 0.0,
              1e-15);
}

TEST(MaeForward, PermutationInvariantWithPerImageSeeds) {
  const auto m = mmtest::noisy_model<double>(mmtest::toy_config(), 5);
  Rng rng(6);
  const auto images = mmtest::random_images(5, 8, 3, rng);
  const std::vector<std::uint64_t> seeds = {11, 12, 13, 14, 15};
  const std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  std::vector<Image> pi;
  std::vector<std::uint64_t> ps;
  for (auto i : perm) {
    pi.push_back(images[i]);
    ps.push_back(seeds[i]);
  }
  const double a = mae_forward(m, std::span<const Image>(images), 0.5, true, std::span<const std::uint64_t>(seeds));
  const double b = mae_forward(m, std::span<const Image>(pi), 0.5, true, std::span<const std::uint64_t>(ps));
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(MaeForward, DecoderAndEncoderGradients) {
  const auto m = mmtest::noisy_model<double>(mmtest::toy_config(), 7);
  Rng rng(8);
  const auto images = mmtest::random_images(3, 8, 3, rng);
  std::vector<MaskingPlan> plans;
  for (int i = 0; i < 3; ++i) plans.push_back(make_masking_plan(4, 0.5, rng));
  for (bool normalize : {false, true}) {
    auto loss = [&](const VitModel<double>& mm, VitParams<double>* g) {
      return mae_forward(mm, std::span<const Image>(images), std::span<const MaskingPlan>(plans), normalize, g);
    };
    const auto r = mmtest::gradient_check(m, loss, 200, 9);
    EXPECT_LT(r.worst, 1e-4) << r.worst_name << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  }
  // classifier head is untouched by reconstruction
  auto g = zeros_like(m.params);
  mae_forward(m, std::span<const Image>(images), std::span<const MaskingPlan>(plans), false, &g);
  EXPECT_TRUE(g.head.w.isZero(0.0));
}
