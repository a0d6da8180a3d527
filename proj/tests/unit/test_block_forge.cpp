// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "propnet/block_forge.hpp"

using namespace propnet;

namespace {

Mask mask(std::initializer_list<int> bits) {
  Mask m;
  for (int b : bits) m.push_back(b != 0);
  return m;
}

ConvParams<double> random_conv(std::size_t o, std::size_t i, std::size_t k, Stream& rng) {
  return {oracle::random_tensor<double>(Shape{o, i, k, k}, rng), ConvGeometry{1, k / 2}};
}

}  // namespace

TEST(Ratio, ParseAndReduce) {
  EXPECT_EQ(parse_ratio("4:2").reduced(), (Ratio{2, 1}));
  EXPECT_EQ(parse_ratio("3:2").str(), "3:2");
  EXPECT_THROW(parse_ratio("2-1"), ConfigError);
  EXPECT_THROW(parse_ratio("1:2"), ConfigError);
}

TEST(PlainModule, ReluPlacement) {
  EXPECT_EQ(build_plain_module({1, 1}, Pairing::kPost).relu_masks[0], mask({1, 1}));
  EXPECT_EQ(build_plain_module({2, 1}, Pairing::kPost).relu_masks[0], mask({0, 1}));
  EXPECT_EQ(build_plain_module({3, 2}, Pairing::kPost).relu_masks[0], mask({0, 1, 1}));
  EXPECT_EQ(build_plain_module({3, 1}, Pairing::kPre).relu_masks[0], mask({0, 0, 1}));
}

TEST(PlainModule, LinearModuleRejectedUnlessAllowed) {
  EXPECT_THROW(build_plain_module({1, 0}, Pairing::kPost), ConfigError);
  BuildOptions opts;
  opts.linear_ok = true;
  EXPECT_EQ(build_plain_module({2, 0}, Pairing::kPost, {}, opts).relu_masks[0], mask({0, 0}));
}

TEST(PlainModule, DropBnFollowsRelu) {
  BuildOptions opts;
  opts.drop_bn_with_relu = true;
  const auto s = build_plain_module({2, 1}, Pairing::kPost, {}, opts);
  EXPECT_EQ(s.bn_masks[0], s.relu_masks[0]);
  EXPECT_EQ(build_plain_module({2, 1}, Pairing::kPost).bn_masks[0], mask({1, 1}));
}

TEST(ResidualBlocks, RemovalMasks) {
  EXPECT_EQ(build_post_building(1).relu_masks[0], mask({0, 1}));
  EXPECT_EQ(build_preact_building(2).relu_masks[0], mask({1, 0}));
  EXPECT_EQ(build_preact_bottleneck(0, {16, 64, 1}).relu_masks[0], mask({1, 1, 1}));
  for (int t = 1; t <= 3; ++t) {
    Mask want = mask({1, 1, 1});
    want[static_cast<std::size_t>(t - 1)] = false;
    EXPECT_EQ(build_preact_bottleneck(t, {16, 64, 1}).relu_masks[0], want);
  }
  EXPECT_THROW(build_preact_bottleneck(4, {16, 64, 1}), ConfigError);
  EXPECT_THROW(build_post_building(3), ConfigError);
}

TEST(ResidualBlocks, MergeRunTypesTouchOnlyFirstBranch) {
  const auto t1 = build_merge_run(1);
  const auto t2 = build_merge_run(2);
  ASSERT_EQ(t1.branches(), 2u);
  EXPECT_EQ(t1.relu_masks[0], mask({1, 0}));
  EXPECT_EQ(t1.relu_masks[1], mask({1, 1}));
  EXPECT_EQ(t2.relu_masks[0], mask({0, 1}));
  EXPECT_EQ(t2.relu_masks[1], mask({1, 1}));
}

TEST(ResidualBlocks, BottleneckWidths) {
  const auto s = build_preact_bottleneck(0, {64, 128, 2});
  EXPECT_EQ(s.mid_channels, 32u);
  EXPECT_EQ(s.kernel_sizes, (std::vector<std::size_t>{1, 3, 1}));
  EXPECT_EQ(s.conv_stride(0), 1u);
  EXPECT_EQ(s.conv_stride(1), 2u);
  EXPECT_TRUE(s.needs_projection());
}

TEST(BlockSpec, ValidateCatchesMaskLength) {
  auto s = build_post_building(0);
  s.relu_masks[0].push_back(true);
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(BlockSpec, SerializeRoundTrip) {
  for (const auto& s : {build_plain_module({3, 2}, Pairing::kPre, {16, 32, 2}), build_merge_run(2, {32, 32, 1}),
                        build_preact_bottleneck(3, {64, 256, 2})}) {
    EXPECT_EQ(parse_block_spec(serialize(s)), s) << serialize(s);
  }
  EXPECT_THROW(parse_block_spec("family=plain-stack convs=2"), ConfigError);
}

TEST(Audit, PlainRatios) {
  const Shape in{1, 16, 8, 8};
  EXPECT_EQ(audit(build_plain_module({2, 1}, Pairing::kPost), in).ratio, (Ratio{2, 1}));
  EXPECT_EQ(audit(build_plain_module({1, 1}, Pairing::kPost), in).ratio, (Ratio{1, 1}));
  EXPECT_EQ(audit(build_plain_module({3, 2}, Pairing::kPost), in).ratio, (Ratio{3, 2}));
}

TEST(Audit, BottleneckRemovalKeepsCostAndDropsOneRelu) {
  const Shape in{1, 64, 8, 8};
  const auto base = audit(build_preact_bottleneck(0, {64, 64, 1}), in);
  EXPECT_EQ(base.ratio, (Ratio{1, 1}));
  for (int t = 1; t <= 3; ++t) {
    const auto r = audit(build_preact_bottleneck(t, {64, 64, 1}), in);
    EXPECT_EQ(r.ratio, (Ratio{3, 2}));
    EXPECT_EQ(r.param_count, base.param_count);
    EXPECT_EQ(r.flops_conv, base.flops_conv);
    EXPECT_LT(r.flops_relu, base.flops_relu);
  }
}

TEST(Audit, ProjectionShortcutCountedSeparately) {
  const auto r = audit(build_post_building(0, {16, 32, 2}), Shape{1, 16, 8, 8});
  EXPECT_EQ(r.n_conv, 2u);
  EXPECT_EQ(r.n_shortcut_conv, 1u);
}

TEST(Collapse, ComposedKernelMatchesStackedConvs) {
  Stream rng(21);
  const auto a = random_conv(4, 3, 3, rng);
  const auto b = random_conv(2, 4, 3, rng);
  const auto r = collapse_check(a, b);
  EXPECT_EQ(r.composed.kernel.shape(), Shape({2, 3, 5, 5}));
  EXPECT_LT(r.max_deviation, 1e-10);
  EXPECT_TRUE(r.collapsed);
}

TEST(Collapse, AffineInteriorBecomesBias) {
  Stream rng(22);
  const auto a = random_conv(3, 2, 3, rng);
  const auto b = random_conv(2, 3, 1, rng);
  Interior in;
  in.kind = InteriorKind::kAffine;
  in.scale = {0.5, 2.0, -1.0};
  in.shift = {1.0, -0.5, 0.25};
  const auto r = collapse_check(a, b, in);
  EXPECT_TRUE(r.collapsed) << r.max_deviation;
  ASSERT_EQ(r.bias.size(), 2u);
  // With a 1x1 second kernel the bias is B . shift.
  for (std::size_t o = 0; o < 2; ++o) {
    double want = 0;
    for (std::size_t m = 0; m < 3; ++m) want += b.kernel.at(o, m, 0, 0) * in.shift[m];
    EXPECT_NEAR(r.bias[o], want, 1e-12);
  }
}

TEST(Collapse, ComposeKernelsByHand) {
  // 1-channel 1D-like case: [1,1] * [1,-1] = [1,0,-1] along x.
  const Tensor<double> a(Shape{1, 1, 1, 2}, {1.0, 1.0});
  const Tensor<double> b(Shape{1, 1, 1, 2}, {1.0, -1.0});
  EXPECT_EQ(compose_kernels(a, b), Tensor<double>(Shape{1, 1, 1, 3}, {1.0, 0.0, -1.0}));
}

TEST(Collapse, ReluInteriorBreaksEquivalence) {
  Stream rng(23);
  const auto a = random_conv(4, 3, 3, rng);
  const auto b = random_conv(2, 4, 3, rng);
  Interior in;
  in.kind = InteriorKind::kRelu;
  const auto r = collapse_check(a, b, in);
  EXPECT_GE(r.max_deviation, 1e-3);
  EXPECT_FALSE(r.collapsed);
}

TEST(Collapse, StridedConvRejected) {
  Stream rng(24);
  auto a = random_conv(2, 2, 3, rng);
  a.geometry.stride = 2;
  EXPECT_THROW(collapse_check(a, random_conv(2, 2, 3, rng)), ConfigError);
}
