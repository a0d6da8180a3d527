// SPDX-License-Identifier: Apache-2.0
//
// Whole networks: a stem convolution, three stages of blocks with stride-2
// transitions, global average pooling and a linear classifier.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "propnet/block_forge.hpp"

namespace propnet {

enum class NetworkFamily : std::uint8_t {
  kPlain,
  kResnet,  // post-activation building blocks
  kResnetPreact,
  kResnetPreactBottleneck,
  kDfnMr1,
};

const char* to_string(NetworkFamily f);
NetworkFamily parse_network_family(const std::string& s);

struct NetworkConfig {
  NetworkFamily family = NetworkFamily::kPlain;
  /// Weighted layers along the longest path: stem + trunk convolutions +
  /// classifier. Projection shortcuts are not counted.
  std::size_t depth = 8;
  /// Plain networks only.
  Ratio ratio{1, 1};
  Pairing pairing = Pairing::kPost;
  /// Residual families: 0 keeps every ReLU; otherwise the family's removal
  /// index (building: 1 first / 2 second; bottleneck: type 1..3; merge-run:
  /// type 1 post-add / type 2 pre-add).
  int removal = 0;
  bool drop_bn_with_relu = false;
  std::size_t num_classes = 10;
  std::array<std::size_t, 3> stage_widths{16, 32, 64};
  /// Explicit blocks per stage; overrides the split derived from depth.
  std::optional<std::array<std::size_t, 3>> stage_blocks;
  std::uint64_t seed = 1;

  bool operator==(const NetworkConfig&) const = default;
};

/// Resolved per-stage block counts. note is non-empty when depth does not fit
/// the family's regular pattern and an uneven split was used.
struct StagePlan {
  std::array<std::size_t, 3> blocks{};
  std::string note;
};

/// Throws ConfigError listing the nearest valid depths when the depth cannot
/// be realized.
StagePlan plan_stages(const NetworkConfig& cfg);

/// Convolutions per block along one path for the configuration.
std::size_t convs_per_block(const NetworkConfig& cfg);

/// The network's block specs in order, with their parameter prefix and stage.
struct BlockPlacement {
  BlockSpec spec;
  std::string prefix;
  int stage = 0;
};

std::vector<BlockPlacement> plan_blocks(const NetworkConfig& cfg);

template <typename T>
class Model {
 public:
  explicit Model(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  const StagePlan& stages() const { return stages_; }
  const std::vector<BlockPlacement>& blocks() const { return blocks_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// input [N,3,H,W] -> logits [N,num_classes].
  Var forward(Graph<T>& g, const Tensor<T>& input, Mode mode);

  /// Weighted layers actually built: stem + trunk convs on one path + head.
  std::size_t weighted_layers() const;

 private:
  NetworkConfig cfg_;
  StagePlan stages_;
  std::vector<BlockPlacement> blocks_;
  ParamStore<T> params_;
};

struct NetworkSummary {
  RatioReport trunk;
  std::array<RatioReport, 3> per_stage;
  std::size_t weighted_layers = 0;
};

/// Audits the assembled graph for one eval-mode forward pass on input_shape.
NetworkSummary summarize(const NetworkConfig& cfg, const Shape& input_shape = Shape{1, 3, 32, 32});

/// Text manifest: a header line with the configuration followed by one
/// serialized BlockSpec per line.
std::string network_manifest(const NetworkConfig& cfg);
NetworkConfig parse_manifest(const std::string& text);
std::string config_line(const NetworkConfig& cfg);
NetworkConfig parse_config_line(const std::string& line);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace propnet
