// SPDX-License-Identifier: Apache-2.0
//
// Declarative block descriptions for every conv/BN/ReLU arrangement the
// library can build, the graph instantiation of those blocks, and the
// structural checks on them: ratio and cost accounting plus the linear
// collapse of two stacked convolutions.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "propnet/autograd.hpp"
#include "propnet/layers.hpp"

namespace propnet {

enum class BlockFamily : std::uint8_t {
  kPlainStack,
  kResnetBuilding,
  kResnetPreactBuilding,
  kResnetPreactBottleneck,
  kDfnMergeRun,
};

/// post: conv -> BN -> ReLU.  pre: BN -> ReLU -> conv.
enum class Pairing : std::uint8_t { kPost, kPre };

const char* to_string(BlockFamily f);
const char* to_string(Pairing p);
BlockFamily parse_block_family(const std::string& s);
Pairing parse_pairing(const std::string& s);

/// Convolution to ReLU ratio N:M.
struct Ratio {
  int convs = 1;
  int relus = 1;

  Ratio reduced() const;
  std::string str() const;
  bool operator==(const Ratio&) const = default;
};

/// Parses "N:M".
Ratio parse_ratio(const std::string& s);

using Mask = std::vector<bool>;

/// One residual/plain block. Masks are indexed by conv position; for the
/// merge-and-run family there is one mask per branch.
///
/// ReLU position semantics per family:
///   plain-stack post     conv_i -> BN_i -> ReLU_i
///   plain-stack pre      BN_i -> ReLU_i -> conv_i
///   resnet-building      conv1 BN1 ReLU1 conv2 BN2 (+skip) ReLU2
///   preact building      BN1 ReLU1 conv1 BN2 ReLU2 conv2 (+skip)
///   preact bottleneck    BN ReLU conv1x1, BN ReLU conv3x3, BN ReLU conv1x1 (+skip)
///   merge-run branch     conv1 BN1 ReLU1 conv2 BN2 (+merged skip) ReLU2
struct BlockSpec {
  BlockFamily family = BlockFamily::kPlainStack;
  Pairing pairing = Pairing::kPost;
  std::size_t conv_count = 2;
  std::vector<Mask> relu_masks{Mask{true, true}};
  std::vector<Mask> bn_masks{Mask{true, true}};
  std::vector<std::size_t> kernel_sizes{3, 3};
  std::size_t in_channels = 16;
  std::size_t mid_channels = 16;
  std::size_t out_channels = 16;
  std::size_t stride = 1;
  bool linear_ok = false;
  bool drop_bn_with_relu = false;

  std::size_t branches() const { return relu_masks.size(); }
  std::size_t relu_count() const;
  std::size_t conv_total() const { return conv_count * branches(); }
  bool has_residual() const { return family != BlockFamily::kPlainStack; }
  /// Channel count entering conv position i.
  std::size_t conv_in(std::size_t i) const;
  std::size_t conv_out(std::size_t i) const;
  std::size_t conv_stride(std::size_t i) const;
  bool needs_projection() const;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;

  bool operator==(const BlockSpec&) const = default;
};

/// Channel/stride placement of a block inside a network.
struct BlockGeometry {
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t stride = 1;
};

struct BuildOptions {
  bool linear_ok = false;
  bool drop_bn_with_relu = false;
};

/// N convolutions with M ReLUs (N >= M >= 0, 1 <= N <= 4). ReLUs sit after
/// positions ceil((j+1) N / M) - 1, so 2:1 drops the ReLU after the first
/// conv. A 1:1 ratio yields the two-conv paired block.
BlockSpec build_plain_module(Ratio ratio, Pairing pairing, const BlockGeometry& geo = {},
                             const BuildOptions& opts = {});

/// removal: 0 none, 1 first, 2 second.
BlockSpec build_post_building(int removal, const BlockGeometry& geo = {}, const BuildOptions& opts = {});
BlockSpec build_preact_building(int removal, const BlockGeometry& geo = {}, const BuildOptions& opts = {});
/// removal_type k in 0..3 drops the k-th ReLU (0 keeps all). out_channels is
/// the expanded width; the bottleneck width is out_channels / 4.
BlockSpec build_preact_bottleneck(int removal_type, const BlockGeometry& geo = {}, const BuildOptions& opts = {});
/// removal: 0 none, 1 drops the post-add ReLU of branch 0, 2 drops its
/// pre-add ReLU.
BlockSpec build_merge_run(int removal, const BlockGeometry& geo = {}, const BuildOptions& opts = {});

/// Single-line key=value text form.
std::string serialize(const BlockSpec& spec);
BlockSpec parse_block_spec(const std::string& line);

// ------------------------------------------------------------ instantiation

/// Registers the block's parameters under prefix with He-normal conv weights.
template <typename T>
void init_block(ParamStore<T>& store, const BlockSpec& spec, const std::string& prefix, std::uint64_t seed);

/// Applies the block. Merge-run blocks take and return two streams; all
/// other families take and return one.
template <typename T>
std::vector<Var> apply_block(Graph<T>& g, ParamStore<T>& store, const BlockSpec& spec, const std::string& prefix,
                             const std::vector<Var>& in, Mode mode);

// ----------------------------------------------------------------- auditing

struct RatioReport {
  std::size_t n_conv = 0;           // trunk convolutions (residual-branch / stack convs)
  std::size_t n_relu = 0;           // trunk ReLUs
  std::size_t n_shortcut_conv = 0;  // projection shortcuts, excluded from the ratio
  Ratio ratio{0, 0};
  double flops_conv = 0.0;  // every convolution in the audited graph
  double flops_relu = 0.0;  // every ReLU in the audited graph
  std::size_t param_count = 0;
};

/// Walks a graph and counts nodes. Ratio and counts cover Region::kTrunk;
/// FLOPs cover the whole graph.
template <typename T>
RatioReport audit_graph(const Graph<T>& g, std::size_t param_count, int stage = -1);

/// Instantiates the block on a zero input of input_shape and audits it.
RatioReport audit(const BlockSpec& spec, const Shape& input_shape);

// --------------------------------------------------------------- collapse

enum class InteriorKind : std::uint8_t { kNone, kAffine, kRelu };

/// What sits between the two convolutions. kAffine is a per-channel
/// scale/shift, i.e. an eval-mode batch norm.
struct Interior {
  InteriorKind kind = InteriorKind::kNone;
  std::vector<double> scale;
  std::vector<double> shift;

  static Interior eval_batchnorm(const BatchNormState<double>& bn);
};

struct CollapseResult {
  ConvParams<double> composed;   // single kernel of size ka + kb - 1
  std::vector<double> bias;      // per output channel, from an affine interior
  double max_deviation = 0.0;    // over the probe outputs
  bool collapsed = false;        // max_deviation < kCollapseTolerance
};

inline constexpr double kCollapseTolerance = 1e-10;

/// Composes convB after convA into one convolution with the larger receptive
/// field and measures the gap to the stacked evaluation on random probes.
/// Outputs within B's padding of the border are excluded: there the stacked
/// version sees B's zero padding of the intermediate map, which a single
/// convolution cannot reproduce.
CollapseResult collapse_check(const ConvParams<double>& a, const ConvParams<double>& b, const Interior& interior = {},
                              std::size_t probes = 10, std::uint64_t seed = 7, std::size_t probe_extent = 12);

/// Full-correlation composition of two kernels: K[o,i] = sum_m B[o,m] * A[m,i].
Tensor<double> compose_kernels(const Tensor<double>& a, const Tensor<double>& b);

}  // namespace propnet
