// SPDX-License-Identifier: Apache-2.0

#include "propnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace propnet {

namespace fs = std::filesystem;

const char* to_string(DatasetSource s) {
  switch (s) {
    case DatasetSource::kCifar10: return "cifar10";
    case DatasetSource::kCifar100: return "cifar100";
    case DatasetSource::kSynthetic: return "synthetic";
  }
  return "?";
}

DatasetSource parse_dataset_source(const std::string& s) {
  if (s == "cifar10") return DatasetSource::kCifar10;
  if (s == "cifar100") return DatasetSource::kCifar100;
  if (s == "synthetic") return DatasetSource::kSynthetic;
  throw ConfigError("unknown dataset '" + s + "' (expected cifar10, cifar100 or synthetic)");
}

std::size_t cifar_record_bytes(DatasetSource which) {
  switch (which) {
    case DatasetSource::kCifar10: return 1 + kImageBytes;
    case DatasetSource::kCifar100: return 2 + kImageBytes;
    default: throw ConfigError("no binary record layout for the synthetic dataset");
  }
}

Dataset load_cifar_file(const fs::path& file, DatasetSource which, Split split) {
  const std::size_t rec = cifar_record_bytes(which);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string(), 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw DataError(file.string() + ": empty file, truncated record", 0);
  if (bytes.size() % rec != 0) {
    throw DataError(file.string() + ": truncated record, size " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(rec),
                    bytes.size() - bytes.size() % rec);
  }
  Dataset d;
  d.source = which;
  d.split = split;
  d.num_classes = which == DatasetSource::kCifar10 ? 10 : 100;
  const std::size_t n = bytes.size() / rec;
  d.labels.resize(n);
  d.pixels.resize(n * kImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * rec;
    std::uint32_t label = 0;
    if (which == DatasetSource::kCifar10) {
      label = bytes[off];
    } else {
      if (bytes[off] >= 20) throw DataError(file.string() + ": coarse label " + std::to_string(bytes[off]) +
                                                " out of range", off);
      label = bytes[off + 1];
    }
    if (label >= d.num_classes) {
      throw DataError(file.string() + ": label " + std::to_string(label) + " out of range [0," +
                          std::to_string(d.num_classes) + ")",
                      off + rec - kImageBytes - 1);
    }
    d.labels[i] = label;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(off + rec - kImageBytes), kImageBytes,
                d.pixels.begin() + static_cast<std::ptrdiff_t>(i * kImageBytes));
  }
  return d;
}

namespace {

std::vector<fs::path> split_files(const fs::path& dir, DatasetSource which, Split split) {
  fs::path root = dir;
  const char* sub = which == DatasetSource::kCifar10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  if (fs::is_directory(dir / sub)) root = dir / sub;
  std::vector<fs::path> files;
  if (which == DatasetSource::kCifar10) {
    if (split == Split::kTrain) {
      for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(root / "test_batch.bin");
    }
  } else {
    files.push_back(root / (split == Split::kTrain ? "train.bin" : "test.bin"));
  }
  return files;
}

}  // namespace

Dataset load_cifar(const fs::path& dir, DatasetSource which, Split split) {
  Dataset all;
  all.source = which;
  all.split = split;
  all.num_classes = which == DatasetSource::kCifar10 ? 10 : 100;
  for (const auto& f : split_files(dir, which, split)) {
    if (!fs::exists(f)) throw DataError("missing dataset file " + f.string(), 0);
    Dataset part = load_cifar_file(f, which, split);
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  return all;
}

Dataset subset(const Dataset& data, std::size_t count, std::uint64_t seed) {
  if (count >= data.size()) return data;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Stream rng(mix_seed(seed, fnv1a("subset")));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  order.resize(count);
  std::sort(order.begin(), order.end());
  Dataset out;
  out.source = data.source;
  out.split = data.split;
  out.num_classes = data.num_classes;
  out.labels.reserve(count);
  out.pixels.reserve(count * kImageBytes);
  for (auto i : order) {
    out.labels.push_back(data.labels[i]);
    const auto img = data.image_bytes(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

Dataset make_synthetic(std::size_t num_classes, std::size_t count, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs at least two classes");
  struct Prototype {
    double cy, cx, sigma;
    std::array<double, 3> color;
    std::array<double, 3> background;
  };
  std::vector<Prototype> protos(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Stream rng(mix_seed(seed, mix_seed(fnv1a("synthetic-class"), c)));
    auto& p = protos[c];
    p.cy = 6.0 + 20.0 * rng.uniform();
    p.cx = 6.0 + 20.0 * rng.uniform();
    p.sigma = 3.0 + 4.0 * rng.uniform();
    for (auto& v : p.color) v = 0.4 + 0.6 * rng.uniform();
    for (auto& v : p.background) v = 0.3 * rng.uniform();
  }
  Dataset d;
  d.source = DatasetSource::kSynthetic;
  d.num_classes = num_classes;
  d.labels.resize(count);
  d.pixels.resize(count * kImageBytes);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % num_classes;
    d.labels[i] = static_cast<std::uint32_t>(c);
    Stream rng(mix_seed(seed, mix_seed(fnv1a("synthetic-sample"), i)));
    const auto& p = protos[c];
    const double cy = p.cy + 2.0 * (rng.uniform() - 0.5);
    const double cx = p.cx + 2.0 * (rng.uniform() - 0.5);
    for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * p.sigma * p.sigma));
          double v = p.background[ch] + p.color[ch] * blob + 0.05 * rng.normal();
          v = std::clamp(v, 0.0, 1.0);
          d.pixels[i * kImageBytes + (ch * kImageSide + y) * kImageSide + x] =
              static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
  }
  return d;
}

Normalization compute_normalization(const Dataset& data) {
  Normalization n;
  if (data.size() == 0) return n;
  const std::size_t plane = kImageSide * kImageSide;
  for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::uint8_t* p = data.pixels.data() + i * kImageBytes + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = p[j] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double count = static_cast<double>(data.size() * plane);
    n.mean[ch] = sum / count;
    n.stddev[ch] = std::sqrt(std::max(sq / count - n.mean[ch] * n.mean[ch], 1e-12));
  }
  return n;
}

Normalization cached_normalization(const fs::path& dir, const Dataset& train) {
  const fs::path file = dir / (std::string("propnet-normalization-") + to_string(train.source) + ".txt");
  if (std::ifstream in(file); in) {
    Normalization n;
    if (in >> n.mean[0] >> n.mean[1] >> n.mean[2] >> n.stddev[0] >> n.stddev[1] >> n.stddev[2]) return n;
  }
  const Normalization n = compute_normalization(train);
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    std::ofstream out(file);
    if (out) {
      out << std::setprecision(17) << n.mean[0] << ' ' << n.mean[1] << ' ' << n.mean[2] << '\n'
          << n.stddev[0] << ' ' << n.stddev[1] << ' ' << n.stddev[2] << '\n';
    }
  }
  return n;
}

Tensor<float> to_image(const Dataset& data, std::size_t index) {
  Tensor<float> img(Shape{kImageChannels, kImageSide, kImageSide});
  const auto bytes = data.image_bytes(index);
  for (std::size_t i = 0; i < kImageBytes; ++i) img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

AugmentParams draw_augment(Stream& rng) {
  AugmentParams p;
  p.crop_y = static_cast<std::size_t>(rng.below(2 * kAugmentPad + 1));
  p.crop_x = static_cast<std::size_t>(rng.below(2 * kAugmentPad + 1));
  p.flip = rng.uniform() < 0.5;
  return p;
}

AugmentParams augment_params_for(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  Stream rng(mix_seed(mix_seed(seed, fnv1a("augment")), mix_seed(epoch, index)));
  return draw_augment(rng);
}

Tensor<float> hflip(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& image, const AugmentParams& p) {
  if (image.rank() != 3) throw ShapeError("augment expects [C,H,W], got " + image.shape().str());
  if (p.crop_y > 2 * kAugmentPad || p.crop_x > 2 * kAugmentPad) throw ConfigError("crop offset outside padding");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + p.crop_y) - static_cast<std::ptrdiff_t>(kAugmentPad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sx =
            static_cast<std::ptrdiff_t>(x + p.crop_x) - static_cast<std::ptrdiff_t>(kAugmentPad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out[(ch * h + y) * w + x] = image[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  }
  return p.flip ? hflip(out) : out;
}

Sample augment(const Sample& sample, Stream& rng) {
  return Sample{augment(sample.image, draw_augment(rng)), sample.label};
}

void normalize_in_place(Tensor<float>& image, const Normalization& norm) {
  const std::size_t plane = image.numel() / kImageChannels;
  for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
    const float m = static_cast<float>(norm.mean[ch]);
    const float s = static_cast<float>(1.0 / norm.stddev[ch]);
    for (std::size_t j = 0; j < plane; ++j) image[ch * plane + j] = (image[ch * plane + j] - m) * s;
  }
}

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, const Normalization& norm,
                    const std::optional<AugmentSchedule>& augmentation) {
  Batch<T> b;
  b.images = Tensor<T>(Shape{indices.size(), kImageChannels, kImageSide, kImageSide});
  b.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t idx = indices[k];
    if (idx >= data.size()) throw ConfigError("sample index out of range");
    Tensor<float> img = to_image(data, idx);
    if (augmentation) img = augment(img, augment_params_for(augmentation->seed, augmentation->epoch, idx));
    normalize_in_place(img, norm);
    std::copy(img.data().begin(), img.data().end(), b.images.raw() + k * kImageBytes);
    b.labels.push_back(data.labels[idx]);
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Stream rng(mix_seed(mix_seed(seed, fnv1a("shuffle")), epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void write_cifar_file(const fs::path& file, const Dataset& data, std::size_t begin, std::size_t end) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string(), 0);
  for (std::size_t i = begin; i < end; ++i) {
    if (data.source == DatasetSource::kCifar100) {
      const char coarse = static_cast<char>(data.labels[i] / 5);
      out.put(coarse);
    }
    out.put(static_cast<char>(data.labels[i]));
    const auto img = data.image_bytes(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

template Batch<float> make_batch(const Dataset&, std::span<const std::size_t>, const Normalization&,
                                 const std::optional<AugmentSchedule>&);
template Batch<double> make_batch(const Dataset&, std::span<const std::size_t>, const Normalization&,
                                  const std::optional<AugmentSchedule>&);

}  // namespace propnet
