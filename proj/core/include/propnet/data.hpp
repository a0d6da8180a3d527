// SPDX-License-Identifier: Apache-2.0
//
// CIFAR-10/100 binary ingestion, augmentation, subsetting and a synthetic
// dataset for fast tests.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "propnet/rng.hpp"
#include "propnet/tensor.hpp"

namespace propnet {

class DataError : public Error {
 public:
  DataError(const std::string& what, std::uint64_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

enum class DatasetSource : std::uint8_t { kCifar10, kCifar100, kSynthetic };
enum class Split : std::uint8_t { kTrain, kTest };

const char* to_string(DatasetSource s);
DatasetSource parse_dataset_source(const std::string& s);

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageBytes = kImageChannels * kImageSide * kImageSide;

/// Images are kept as raw channel-planar bytes; conversion to floats happens
/// when a batch is assembled.
struct Dataset {
  DatasetSource source = DatasetSource::kSynthetic;
  Split split = Split::kTrain;
  std::size_t num_classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image_bytes(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * kImageBytes, kImageBytes);
  }
};

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Record length of the binary format: 3073 for CIFAR-10 (label + pixels),
/// 3074 for CIFAR-100 (coarse label, fine label, pixels).
std::size_t cifar_record_bytes(DatasetSource which);

/// Parses one binary batch file. The fine label is used for CIFAR-100.
Dataset load_cifar_file(const std::filesystem::path& file, DatasetSource which, Split split);

/// Loads a split from a directory holding either the raw batch files or the
/// standard extracted folder (cifar-10-batches-bin / cifar-100-binary).
/// CIFAR-10 train reads data_batch_1..5.bin, test reads test_batch.bin;
/// CIFAR-100 reads train.bin / test.bin.
Dataset load_cifar(const std::filesystem::path& dir, DatasetSource which, Split split);

/// First `count` samples of a seed-determined permutation, restored to their
/// original relative order.
Dataset subset(const Dataset& data, std::size_t count, std::uint64_t seed);

/// Class-conditional Gaussian blobs with pixel noise, stratified so every
/// class gets count / num_classes samples (the remainder goes to the lowest
/// classes).
Dataset make_synthetic(std::size_t num_classes, std::size_t count, std::uint64_t seed);

/// Per-channel mean/std of the [0,1]-scaled pixels.
Normalization compute_normalization(const Dataset& data);

/// Reads normalization constants cached beside the data, computing and
/// (if the directory is writable) storing them on first use.
Normalization cached_normalization(const std::filesystem::path& dir, const Dataset& train);

/// [3,32,32] image in [0,1].
Tensor<float> to_image(const Dataset& data, std::size_t index);

struct AugmentParams {
  std::size_t crop_y = 4;  // offset into the 40x40 padded image
  std::size_t crop_x = 4;
  bool flip = false;
};

inline constexpr std::size_t kAugmentPad = 4;

AugmentParams draw_augment(Stream& rng);
/// Draw for sample `index` of epoch `epoch`.
AugmentParams augment_params_for(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

/// Zero-pads by 4 on each side, crops 32x32 at the given offset, then
/// optionally mirrors horizontally.
Tensor<float> augment(const Tensor<float>& image, const AugmentParams& p);
Tensor<float> hflip(const Tensor<float>& image);

struct Sample {
  Tensor<float> image;
  std::uint32_t label = 0;
};

Sample augment(const Sample& sample, Stream& rng);

void normalize_in_place(Tensor<float>& image, const Normalization& norm);

template <typename T>
struct Batch {
  Tensor<T> images;  // [B,3,32,32]
  std::vector<std::uint32_t> labels;
};

struct AugmentSchedule {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

/// Assembles normalized images for the given sample indices. With an
/// augmentation schedule, each sample is augmented by its own (seed, epoch,
/// index) stream.
template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, const Normalization& norm,
                    const std::optional<AugmentSchedule>& augmentation = std::nullopt);

/// Shuffled sample order for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Writes a dataset in the CIFAR binary layout (used to produce fixtures).
void write_cifar_file(const std::filesystem::path& file, const Dataset& data, std::size_t begin, std::size_t end);

}  // namespace propnet
