#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace maskmatch;
using mmtest::toy_config;

TEST(VitInit, ParameterCountMatchesHandCount) {
  // toy config, counted by hand layer by layer:
  //   patch_embed 48*16+16 = 784
  //   encoder block 4*16 + (16*48+48) + (16*16+16) + (16*32+32) + (32*16+16) = 2224, twice = 4448
  //   norm 32, head 16*3+3 = 51, decoder_embed 16*8+8 = 136, mask token 8
  //   decoder block 4*8 + (8*24+24) + (8*8+8) + (8*16+16) + (16*8+8) = 600
  //   decoder_norm 16, decoder_pred 8*48+48 = 432
  const auto m = init_params<float>(toy_config(), 0);
  EXPECT_EQ(parameter_count(m.params), 6507u);
  EXPECT_EQ(expected_parameter_count(toy_config()), 6507u);

  ModelConfig big;
  EXPECT_EQ(parameter_count(init_params<float>(big, 0).params), expected_parameter_count(big));
}

TEST(VitInit, DeterministicWithZeroBiases) {
  const auto a = init_params<float>(toy_config(), 5);
  const auto b = init_params<float>(toy_config(), 5);
  const auto c = init_params<float>(toy_config(), 6);
  bool differs = false;
  for_each_tensor(
      [&](const std::string& name, const Mat<float>& x, const Mat<float>& y, const Mat<float>& z) {
        EXPECT_TRUE(x == y) << name;
        if (!(x == z)) differs = true;
        if (name.ends_with(".b") || name.ends_with(".beta")) {
          EXPECT_TRUE(x.isZero(0.0f)) << name;
        }
        if (name.ends_with(".gamma")) {
          EXPECT_TRUE((x.array() == 1.0f).all()) << name;
        }
        if (name.ends_with(".w")) {
          EXPECT_LE(x.cwiseAbs().maxCoeff(), 0.04f + 1e-7f) << name;
        }
      },
      a.params, b.params, c.params);
  EXPECT_TRUE(differs);
}

TEST(VitConfig, Validation) {
  auto c = toy_config();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.decoder_depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.image_size = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Classify, ValidDeterministicDistribution) {
  const auto m = mmtest::noisy_model<float>(toy_config(), 1);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const auto img = mmtest::random_image(8, 8, 3, rng);
    const auto p = classify(m, img);
    ASSERT_EQ(p.size(), 3u);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(classify(m, img), p);
  }
}

TEST(Classify, HeadPermutationPermutesOutput) {
  auto m = mmtest::noisy_model<double>(toy_config(), 3);
  Rng rng(4);
  const auto img = mmtest::random_image(8, 8, 3, rng);
  const auto p = classify(m, img);
  const std::vector<int> perm = {2, 0, 1};
  auto q = m;
  for (int c = 0; c < 3; ++c) {
    q.params.head.w.col(c) = m.params.head.w.col(perm[c]);
    q.params.head.b(0, c) = m.params.head.b(0, perm[c]);
  }
  const auto pq = classify(q, img);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pq[c], p[perm[c]], 1e-14);
}

TEST(Classify, ShapeMismatch) {
  const auto m = init_params<float>(toy_config(), 0);
  EXPECT_THROW(classify(m, Image(16, 16, 3)), ShapeError);
  EXPECT_THROW(classify(m, Image(8, 8, 1)), ShapeError);
}

TEST(Classify, MatchesEncodeVisibleOnAllPositions) {
  const auto m = mmtest::noisy_model<double>(toy_config(), 5);
  Rng rng(6);
  const auto img = mmtest::random_image(8, 8, 3, rng);
  const auto patches = patchify<double>(img, 4);
  const auto z = encode_visible(m, patches, all_positions(m));
  Mat<double> logits = layers::linear(m.params.head, Mat<double>(z.vectors.colwise().mean()));
  softmax_rows(logits);
  const auto p = classify(m, img);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(logits(0, c), p[c]);
}

TEST(EncodeVisible, OutputLengths) {
  ModelConfig c;  // 32x32, patch 4: 64 tokens
  c.embed_dim = 16;
  c.num_heads = 2;
  c.depth = 1;
  c.decoder_embed_dim = 8;
  c.decoder_heads = 2;
  c.decoder_depth = 1;
  const auto m = init_params<float>(c, 0);
  Rng rng(1);
  const auto patches = patchify<float>(mmtest::random_image(32, 32, 3, rng), 4);
  EXPECT_EQ(encode_visible(m, patches, all_positions(m)).vectors.rows(), 64);
  const auto plan = make_masking_plan(64, 0.3, rng);
  ASSERT_EQ(plan.masked.size(), 19u);
  EXPECT_EQ(encode_visible(m, patches, plan.visible()).vectors.rows(), 45);
  EXPECT_THROW(encode_visible(m, patches, {}), PreconditionError);
  EXPECT_THROW(encode_visible(m, patches, {1, 1}), PreconditionError);
  EXPECT_THROW(encode_visible(m, patches, {64}), PreconditionError);
}

TEST(EncodeVisible, IndependentOfInputOrder) {
  const auto m = mmtest::noisy_model<double>(toy_config(), 7);
  Rng rng(8);
  const auto patches = patchify<double>(mmtest::random_image(8, 8, 3, rng), 4);
  const std::vector<int> fwd = {0, 2, 3}, rev = {3, 0, 2};
  const auto a = encode_visible(m, patches, fwd);
  const auto b = encode_visible(m, patches, rev);
  for (std::size_t i = 0; i < rev.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(std::find(fwd.begin(), fwd.end(), rev[i]) - fwd.begin());
    EXPECT_LT((b.vectors.row(static_cast<Eigen::Index>(i)) - a.vectors.row(j)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(DecodeFull, EmitsAllPatchesAndChecksCover) {
  const auto m = mmtest::noisy_model<double>(toy_config(), 9);
  Rng rng(10);
  const auto patches = patchify<double>(mmtest::random_image(8, 8, 3, rng), 4);
  const auto one_visible = encode_visible(m, patches, {2});
  const auto out = decode_full(m, one_visible, {0, 1, 3}, 4);
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 48);
  EXPECT_THROW(decode_full(m, one_visible, {0, 1}, 4), PreconditionError);
  EXPECT_THROW(decode_full(m, one_visible, {0, 1, 2}, 4), PreconditionError);
  EXPECT_THROW(decode_full(m, one_visible, {0, 1, 3, 3}, 4), PreconditionError);
}

TEST(VitGradients, ClassificationLoss) {
  const auto m = mmtest::noisy_model<double>(toy_config(), 11);
  Rng rng(12);
  const auto img = mmtest::random_image(8, 8, 3, rng);
  const std::vector<double> target = {0.2, 0.5, 0.3};
  const auto r = mmtest::gradient_check(
      m, [&](const VitModel<double>& mm, VitParams<double>* g) { return classification_loss(mm, img, target, g, 1.0); },
      200, 13);
  EXPECT_LT(r.worst, 1e-4) << r.worst_name << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(VitGradients, ReconstructionReachesMaskToken) {
  const auto m = mmtest::noisy_model<double>(toy_config(), 14);
  Rng rng(15);
  const auto img = mmtest::random_image(8, 8, 3, rng);
  MaskingPlan plan{{1, 3}, 4, 0.5};
  auto loss = [&](const VitModel<double>& mm, VitParams<double>* g) {
    return mae_image_loss(mm, img, plan, false, g, 1.0);
  };
  auto g = zeros_like(m.params);
  loss(m, &g);
  EXPECT_GT(g.mask_token.cwiseAbs().maxCoeff(), 1e-6);
  // finite-difference probe on each mask-token entry
  auto probe = m;
  for (Eigen::Index i = 0; i < probe.params.mask_token.size(); ++i) {
    const double h = 1e-5, orig = probe.params.mask_token(0, i);
    probe.params.mask_token(0, i) = orig + h;
    const double up = loss(probe, nullptr);
    probe.params.mask_token(0, i) = orig - h;
    const double down = loss(probe, nullptr);
    probe.params.mask_token(0, i) = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(g.mask_token(0, i), fd, 1e-4 * std::max(std::abs(fd), 1e-3));
  }
  const auto r = mmtest::gradient_check(m, loss, 200, 16);
  EXPECT_LT(r.worst, 1e-4) << r.worst_name << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(CastModel, FloatToDoubleAndBack) {
  const auto f = init_params<float>(toy_config(), 3);
  const auto d = cast_model<double>(f);
  const auto back = cast_model<float>(d);
  for_each_tensor([](const std::string& n, const Mat<float>& a, const Mat<float>& b) { EXPECT_TRUE(a == b) << n; },
                  f.params, back.params);
  Rng rng(4);
  const auto img = mmtest::random_image(8, 8, 3, rng);
  const auto pf = classify(f, img), pd = classify(d, img);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pf[c], pd[c], 1e-5);
}
