// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "propnet/data.hpp"

using namespace propnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("propnet-test-data-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& file, const std::vector<std::uint8_t>& bytes) {
  std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

float px(const Tensor<float>& img, std::size_t c, std::size_t y, std::size_t x) {
  return img[(c * kImageSide + y) * kImageSide + x];
}

Dataset cifar_like(DatasetSource src, std::size_t n) {
  Dataset d = make_synthetic(src == DatasetSource::kCifar100 ? 100 : 10, n, 3);
  d.source = src;
  return d;
}

}  // namespace

TEST(Cifar, RecordSizes) {
  EXPECT_EQ(cifar_record_bytes(DatasetSource::kCifar10), 3073u);
  EXPECT_EQ(cifar_record_bytes(DatasetSource::kCifar100), 3074u);
}

TEST(Cifar, Cifar10RecordLayout) {
  const auto dir = scratch("layout");
  std::vector<std::uint8_t> bytes(2 * 3073);
  bytes[0] = 7;
  bytes[1] = 11;                 // red (0,0)
  bytes[1 + 1024] = 22;          // green (0,0)
  bytes[1 + 2048 + 33] = 33;     // blue (1,1)
  bytes[3073] = 2;
  bytes[3073 + 3072] = 99;       // blue (31,31)
  write_bytes(dir / "b.bin", bytes);
  const Dataset d = load_cifar_file(dir / "b.bin", DatasetSource::kCifar10, Split::kTrain);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<std::uint32_t>{7, 2}));
  EXPECT_EQ(d.image_bytes(0)[0], 11);
  EXPECT_EQ(d.image_bytes(0)[1024], 22);
  EXPECT_EQ(d.image_bytes(0)[2048 + 33], 33);
  EXPECT_EQ(d.image_bytes(1)[3071], 99);
  const auto img = to_image(d, 0);
  EXPECT_FLOAT_EQ(px(img, 0, 0, 0), 11.0f / 255.0f);
}

TEST(Cifar, WriterRoundTrip) {
  for (auto src : {DatasetSource::kCifar10, DatasetSource::kCifar100}) {
    const auto dir = scratch("roundtrip");
    const Dataset d = cifar_like(src, 30);
    write_cifar_file(dir / "x.bin", d, 5, 25);
    EXPECT_EQ(fs::file_size(dir / "x.bin"), 20 * cifar_record_bytes(src));
    const Dataset back = load_cifar_file(dir / "x.bin", src, Split::kTest);
    ASSERT_EQ(back.size(), 20u);
    EXPECT_TRUE(std::equal(back.labels.begin(), back.labels.end(), d.labels.begin() + 5));
    EXPECT_TRUE(std::equal(back.pixels.begin(), back.pixels.end(), d.pixels.begin() + 5 * kImageBytes));
  }
}

TEST(Cifar, DirectoryLayoutsAndCounts) {
  const auto dir = scratch("dir");
  const Dataset d = cifar_like(DatasetSource::kCifar10, 60);
  fs::create_directories(dir / "cifar-10-batches-bin");
  for (int i = 0; i < 5; ++i) {
    write_cifar_file(dir / "cifar-10-batches-bin" / ("data_batch_" + std::to_string(i + 1) + ".bin"), d,
                     static_cast<std::size_t>(i) * 10, static_cast<std::size_t>(i + 1) * 10);
  }
  write_cifar_file(dir / "cifar-10-batches-bin" / "test_batch.bin", d, 50, 60);
  const Dataset train = load_cifar(dir, DatasetSource::kCifar10, Split::kTrain);
  const Dataset test = load_cifar(dir, DatasetSource::kCifar10, Split::kTest);
  EXPECT_EQ(train.size(), 50u);
  EXPECT_EQ(test.size(), 10u);
  EXPECT_TRUE(std::equal(train.labels.begin(), train.labels.end(), d.labels.begin()));
  fs::remove(dir / "cifar-10-batches-bin" / "data_batch_3.bin");
  EXPECT_THROW(load_cifar(dir, DatasetSource::kCifar10, Split::kTrain), DataError);
}

TEST(Cifar, TruncatedFileReportsOffsetOfPartialRecord) {
  const auto dir = scratch("trunc");
  write_cifar_file(dir / "ok.bin", cifar_like(DatasetSource::kCifar10, 3), 0, 3);
  auto bytes = read_bytes(dir / "ok.bin");
  bytes.resize(bytes.size() - 100);
  write_bytes(dir / "cut.bin", bytes);
  try {
    load_cifar_file(dir / "cut.bin", DatasetSource::kCifar10, Split::kTrain);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 2u * 3073u);
    EXPECT_NE(std::string(e.what()).find("offset 6146"), std::string::npos) << e.what();
  }
}

TEST(Cifar, EmptyFileRejectedAtOffsetZero) {
  const auto dir = scratch("empty");
  write_bytes(dir / "e.bin", {});
  try {
    load_cifar_file(dir / "e.bin", DatasetSource::kCifar10, Split::kTrain);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Cifar, BadLabelsReportRecordOffset) {
  const auto dir = scratch("label");
  write_cifar_file(dir / "ok.bin", cifar_like(DatasetSource::kCifar10, 3), 0, 3);
  auto bytes = read_bytes(dir / "ok.bin");
  bytes[3073] = 10;
  write_bytes(dir / "bad.bin", bytes);
  try {
    load_cifar_file(dir / "bad.bin", DatasetSource::kCifar10, Split::kTrain);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 3073u);
  }

  write_cifar_file(dir / "ok100.bin", cifar_like(DatasetSource::kCifar100, 3), 0, 3);
  bytes = read_bytes(dir / "ok100.bin");
  bytes[2 * 3074] = 20;  // coarse label
  write_bytes(dir / "bad100.bin", bytes);
  try {
    load_cifar_file(dir / "bad100.bin", DatasetSource::kCifar100, Split::kTrain);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 2u * 3074u);
  }
}

TEST(Synthetic, StratifiedAndDeterministic) {
  const Dataset a = make_synthetic(10, 105, 4);
  EXPECT_EQ(a.pixels, make_synthetic(10, 105, 4).pixels);
  std::vector<std::size_t> counts(10);
  for (auto l : a.labels) ++counts[l];
  EXPECT_EQ(counts[0], 11u);
  EXPECT_EQ(counts[4], 11u);
  EXPECT_EQ(counts[5], 10u);
  EXPECT_THROW(make_synthetic(1, 10, 1), ConfigError);
}

TEST(Subset, SeedChoosesSamplesKeepsOrder) {
  const Dataset d = make_synthetic(10, 200, 1);
  const Dataset s = subset(d, 50, 9);
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(s.labels, subset(d, 50, 9).labels);
  EXPECT_NE(s.pixels, subset(d, 50, 10).pixels);
  EXPECT_EQ(subset(d, 500, 9).size(), 200u);
}

TEST(EpochOrder, PermutationDependsOnSeedAndEpoch) {
  const auto a = epoch_order(100, 1, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(100);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
  EXPECT_EQ(a, epoch_order(100, 1, 0));
  EXPECT_NE(a, epoch_order(100, 1, 1));
  EXPECT_NE(a, epoch_order(100, 2, 0));
}

TEST(Augment, CenteredCropIsIdentityAndFlipIsInvolution) {
  const Dataset d = make_synthetic(10, 3, 2);
  const auto img = to_image(d, 1);
  EXPECT_EQ(augment(img, AugmentParams{4, 4, false}), img);
  EXPECT_EQ(hflip(hflip(img)), img);
  const auto flipped = augment(img, AugmentParams{4, 4, true});
  EXPECT_EQ(px(flipped, 2, 5, 0), px(img, 2, 5, 31));
}

TEST(Augment, ShiftedCropPadsWithZeros) {
  const Dataset d = make_synthetic(10, 1, 2);
  const auto img = to_image(d, 0);
  const auto out = augment(img, AugmentParams{0, 8, false});
  // Row 0..3 come from padding; column x maps to source x + 4.
  EXPECT_EQ(px(out, 0, 0, 0), 0.0f);
  EXPECT_EQ(px(out, 1, 10, 5), px(img, 1, 6, 9));
  EXPECT_EQ(px(out, 1, 10, 31), 0.0f);
}

TEST(Augment, ParamsInRangeAndKeyed) {
  std::size_t flips = 0;
  for (std::uint64_t i = 0; i < 400; ++i) {
    const auto p = augment_params_for(5, 2, i);
    EXPECT_LE(p.crop_y, 8u);
    EXPECT_LE(p.crop_x, 8u);
    flips += p.flip ? 1 : 0;
    const auto q = augment_params_for(5, 2, i);
    EXPECT_EQ(p.crop_y, q.crop_y);
    EXPECT_EQ(p.flip, q.flip);
  }
  EXPECT_GT(flips, 150u);
  EXPECT_LT(flips, 250u);
}

TEST(Normalization, ChannelMeanAndStd) {
  Dataset d;
  d.num_classes = 2;
  d.labels = {0, 1};
  d.pixels.assign(2 * kImageBytes, 0);
  std::fill_n(d.pixels.begin() + static_cast<std::ptrdiff_t>(kImageBytes), kImageBytes, 255);
  const auto n = compute_normalization(d);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(n.mean[static_cast<std::size_t>(c)], 0.5, 1e-12);
    EXPECT_NEAR(n.stddev[static_cast<std::size_t>(c)], 0.5, 1e-9);
  }
  const std::vector<std::size_t> idx{1, 0};
  const auto b = make_batch<double>(d, idx, n);
  EXPECT_EQ(b.images.shape(), Shape({2, 3, 32, 32}));
  EXPECT_NEAR(b.images[0], 1.0, 1e-6);
  EXPECT_NEAR(b.images[b.images.numel() - 1], -1.0, 1e-6);
  EXPECT_EQ(b.labels, (std::vector<std::uint32_t>{1, 0}));
}

TEST(Normalization, CachedValuesReused) {
  const auto dir = scratch("norm");
  const Dataset d = make_synthetic(10, 20, 1);
  const auto a = cached_normalization(dir, d);
  const auto b = cached_normalization(dir, make_synthetic(10, 20, 99));
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stddev, b.stddev);
}

TEST(Batch, AugmentationKeyedBySampleNotPosition) {
  const Dataset d = make_synthetic(10, 8, 1);
  const Normalization n;
  const std::vector<std::size_t> ab{2, 5}, ba{5, 2};
  const AugmentSchedule sched{7, 3};
  const auto x = make_batch<float>(d, ab, n, sched);
  const auto y = make_batch<float>(d, ba, n, sched);
  EXPECT_TRUE(std::equal(x.images.data().begin(), x.images.data().begin() + kImageBytes,
                         y.images.data().begin() + kImageBytes));
}
