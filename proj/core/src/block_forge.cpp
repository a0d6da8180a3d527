// SPDX-License-Identifier: Apache-2.0

#include "propnet/block_forge.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "propnet/rng.hpp"

namespace propnet {

// -------------------------------------------------------------------- names

const char* to_string(BlockFamily f) {
  switch (f) {
    case BlockFamily::kPlainStack: return "plain-stack";
    case BlockFamily::kResnetBuilding: return "resnet-building";
    case BlockFamily::kResnetPreactBuilding: return "resnet-preact-building";
    case BlockFamily::kResnetPreactBottleneck: return "resnet-preact-bottleneck";
    case BlockFamily::kDfnMergeRun: return "dfn-merge-run";
  }
  return "?";
}

const char* to_string(Pairing p) { return p == Pairing::kPost ? "post" : "pre"; }

BlockFamily parse_block_family(const std::string& s) {
  for (auto f : {BlockFamily::kPlainStack, BlockFamily::kResnetBuilding, BlockFamily::kResnetPreactBuilding,
                 BlockFamily::kResnetPreactBottleneck, BlockFamily::kDfnMergeRun}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown block family '" + s + "'");
}

Pairing parse_pairing(const std::string& s) {
  if (s == "post") return Pairing::kPost;
  if (s == "pre") return Pairing::kPre;
  throw ConfigError("pairing must be 'pre' or 'post', got '" + s + "'");
}

Ratio Ratio::reduced() const {
  const int g = std::gcd(convs, relus);
  if (g == 0) return *this;
  return Ratio{convs / g, relus / g};
}

std::string Ratio::str() const { return std::to_string(convs) + ":" + std::to_string(relus); }

Ratio parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("ratio must look like N:M, got '" + s + "'");
  try {
    std::size_t used = 0;
    const int n = std::stoi(s.substr(0, colon), &used);
    if (used != colon) throw ConfigError("bad ratio '" + s + "'");
    const std::string rest = s.substr(colon + 1);
    const int m = std::stoi(rest, &used);
    if (used != rest.size()) throw ConfigError("bad ratio '" + s + "'");
    if (n < 1 || m < 0) throw ConfigError("ratio '" + s + "' needs N >= 1 and M >= 0");
    if (m > n) throw ConfigError("ratio '" + s + "': a module cannot have more ReLUs than convolutions");
    return Ratio{n, m};
  } catch (const std::logic_error&) {
    throw ConfigError("ratio must look like N:M, got '" + s + "'");
  }
}

// ---------------------------------------------------------------- BlockSpec

std::size_t BlockSpec::relu_count() const {
  std::size_t n = 0;
  for (const auto& m : relu_masks) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
  return n;
}

std::size_t BlockSpec::conv_in(std::size_t i) const {
  if (i == 0) return in_channels;
  if (family == BlockFamily::kResnetPreactBottleneck) return mid_channels;
  return out_channels;
}

std::size_t BlockSpec::conv_out(std::size_t i) const {
  if (family == BlockFamily::kResnetPreactBottleneck) return i + 1 == conv_count ? out_channels : mid_channels;
  return out_channels;
}

std::size_t BlockSpec::conv_stride(std::size_t i) const {
  if (family == BlockFamily::kResnetPreactBottleneck) return i == 1 ? stride : 1;
  return i == 0 ? stride : 1;
}

bool BlockSpec::needs_projection() const {
  return has_residual() && (in_channels != out_channels || stride != 1);
}

void BlockSpec::validate() const {
  const std::size_t want_branches = family == BlockFamily::kDfnMergeRun ? 2 : 1;
  if (relu_masks.size() != want_branches || bn_masks.size() != want_branches) {
    throw ConfigError(std::string(to_string(family)) + " expects " + std::to_string(want_branches) +
                      " mask(s) per kind");
  }
  std::size_t want_convs = 0;
  switch (family) {
    case BlockFamily::kPlainStack:
      if (conv_count < 2 || conv_count > 4) throw ConfigError("plain module needs 2..4 convolutions");
      want_convs = conv_count;
      break;
    case BlockFamily::kResnetPreactBottleneck: want_convs = 3; break;
    default: want_convs = 2; break;
  }
  if (conv_count != want_convs) {
    throw ConfigError(std::string(to_string(family)) + " has " + std::to_string(want_convs) + " convolutions, got " +
                      std::to_string(conv_count));
  }
  for (std::size_t b = 0; b < want_branches; ++b) {
    if (relu_masks[b].size() != conv_count || bn_masks[b].size() != conv_count) {
      throw ConfigError("mask length must equal conv count " + std::to_string(conv_count));
    }
  }
  if (kernel_sizes.size() != conv_count) throw ConfigError("one kernel size per convolution required");
  for (auto k : kernel_sizes) {
    if (k % 2 == 0) throw ConfigError("kernel sizes must be odd");
  }
  if (relu_count() == 0 && !linear_ok) {
    throw ConfigError("all ReLUs removed: this is a linear module; set linear_ok to build it anyway");
  }
  if (in_channels == 0 || mid_channels == 0 || out_channels == 0 || stride == 0) {
    throw ConfigError("channels and stride must be positive");
  }
  if (pairing == Pairing::kPre && family == BlockFamily::kResnetBuilding) {
    throw ConfigError("resnet-building is post-activation");
  }
}

namespace {

Mask bn_mask_for(const Mask& relu, const BuildOptions& opts) {
  return opts.drop_bn_with_relu ? relu : Mask(relu.size(), true);
}

BlockSpec base_spec(BlockFamily family, Pairing pairing, std::size_t convs, const BlockGeometry& geo,
                    const BuildOptions& opts) {
  BlockSpec s;
  s.family = family;
  s.pairing = pairing;
  s.conv_count = convs;
  s.kernel_sizes.assign(convs, 3);
  s.in_channels = geo.in_channels;
  s.mid_channels = geo.out_channels;
  s.out_channels = geo.out_channels;
  s.stride = geo.stride;
  s.linear_ok = opts.linear_ok;
  s.drop_bn_with_relu = opts.drop_bn_with_relu;
  return s;
}

Mask mask_without(std::size_t n, int removal) {
  Mask m(n, true);
  if (removal < 0 || removal > static_cast<int>(n)) {
    throw ConfigError("removal index " + std::to_string(removal) + " out of range 0.." + std::to_string(n));
  }
  if (removal > 0) m[static_cast<std::size_t>(removal - 1)] = false;
  return m;
}

}  // namespace

BlockSpec build_plain_module(Ratio ratio, Pairing pairing, const BlockGeometry& geo, const BuildOptions& opts) {
  if (ratio.convs < 1 || ratio.convs > 4 || ratio.relus < 0 || ratio.relus > ratio.convs) {
    throw ConfigError("ratio " + ratio.str() + " invalid: need N >= M >= 0 and 1 <= N <= 4");
  }
  if (ratio.relus == 0 && !opts.linear_ok) {
    throw ConfigError("ratio " + ratio.str() + " removes every ReLU: linear module rejected");
  }
  if (ratio.convs == 1) ratio = Ratio{2, 2 * ratio.relus};
  const auto n = static_cast<std::size_t>(ratio.convs);
  Mask relu(n, false);
  for (int j = 0; j < ratio.relus; ++j) {
    const int pos = ((j + 1) * ratio.convs + ratio.relus - 1) / ratio.relus - 1;
    relu[static_cast<std::size_t>(pos)] = true;
  }
  BlockSpec s = base_spec(BlockFamily::kPlainStack, pairing, n, geo, opts);
  s.relu_masks = {relu};
  s.bn_masks = {bn_mask_for(relu, opts)};
  s.validate();
  return s;
}

BlockSpec build_post_building(int removal, const BlockGeometry& geo, const BuildOptions& opts) {
  BlockSpec s = base_spec(BlockFamily::kResnetBuilding, Pairing::kPost, 2, geo, opts);
  const Mask relu = mask_without(2, removal);
  s.relu_masks = {relu};
  s.bn_masks = {bn_mask_for(relu, opts)};
  s.validate();
  return s;
}

BlockSpec build_preact_building(int removal, const BlockGeometry& geo, const BuildOptions& opts) {
  BlockSpec s = base_spec(BlockFamily::kResnetPreactBuilding, Pairing::kPre, 2, geo, opts);
  const Mask relu = mask_without(2, removal);
  s.relu_masks = {relu};
  s.bn_masks = {bn_mask_for(relu, opts)};
  s.validate();
  return s;
}

BlockSpec build_preact_bottleneck(int removal_type, const BlockGeometry& geo, const BuildOptions& opts) {
  if (geo.out_channels % 4 != 0) throw ConfigError("bottleneck output width must be a multiple of 4");
  BlockSpec s = base_spec(BlockFamily::kResnetPreactBottleneck, Pairing::kPre, 3, geo, opts);
  s.kernel_sizes = {1, 3, 1};
  s.mid_channels = geo.out_channels / 4;
  const Mask relu = mask_without(3, removal_type);
  s.relu_masks = {relu};
  s.bn_masks = {bn_mask_for(relu, opts)};
  s.validate();
  return s;
}

BlockSpec build_merge_run(int removal, const BlockGeometry& geo, const BuildOptions& opts) {
  if (removal < 0 || removal > 2) throw ConfigError("merge-run removal must be 0 (none), 1 or 2");
  BlockSpec s = base_spec(BlockFamily::kDfnMergeRun, Pairing::kPost, 2, geo, opts);
  Mask branch0{true, true};
  if (removal == 1) branch0[1] = false;  // post-add
  if (removal == 2) branch0[0] = false;  // pre-add
  const Mask branch1{true, true};
  s.relu_masks = {branch0, branch1};
  s.bn_masks = {bn_mask_for(branch0, opts), bn_mask_for(branch1, opts)};
  s.validate();
  return s;
}

// ------------------------------------------------------------ serialization

namespace {

std::string mask_str(const std::vector<Mask>& masks) {
  std::string out;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (b) out += '/';
    for (bool v : masks[b]) out += v ? '1' : '0';
  }
  return out;
}

std::vector<Mask> parse_masks(const std::string& s) {
  std::vector<Mask> out(1);
  for (char c : s) {
    if (c == '/') {
      out.emplace_back();
    } else if (c == '0' || c == '1') {
      out.back().push_back(c == '1');
    } else {
      throw ConfigError("mask must be 0/1 digits, got '" + s + "'");
    }
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw ConfigError("");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  }
}

}  // namespace

std::string serialize(const BlockSpec& spec) {
  std::ostringstream os;
  os << "family=" << to_string(spec.family) << " pairing=" << to_string(spec.pairing)
     << " convs=" << spec.conv_count << " relu=" << mask_str(spec.relu_masks) << " bn=" << mask_str(spec.bn_masks)
     << " kernels=";
  for (std::size_t i = 0; i < spec.kernel_sizes.size(); ++i) os << (i ? "," : "") << spec.kernel_sizes[i];
  os << " in=" << spec.in_channels << " mid=" << spec.mid_channels << " out=" << spec.out_channels
     << " stride=" << spec.stride << " linear_ok=" << (spec.linear_ok ? 1 : 0)
     << " drop_bn_with_relu=" << (spec.drop_bn_with_relu ? 1 : 0);
  return os.str();
}

BlockSpec parse_block_spec(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("block spec missing '" + key + "'");
    return it->second;
  };
  BlockSpec s;
  s.family = parse_block_family(take("family"));
  s.pairing = parse_pairing(take("pairing"));
  s.conv_count = parse_count("convs", take("convs"));
  s.relu_masks = parse_masks(take("relu"));
  s.bn_masks = parse_masks(take("bn"));
  s.kernel_sizes.clear();
  std::istringstream ks(take("kernels"));
  std::string k;
  while (std::getline(ks, k, ',')) s.kernel_sizes.push_back(parse_count("kernels", k));
  s.in_channels = parse_count("in", take("in"));
  s.mid_channels = parse_count("mid", take("mid"));
  s.out_channels = parse_count("out", take("out"));
  s.stride = parse_count("stride", take("stride"));
  s.linear_ok = take("linear_ok") == "1";
  s.drop_bn_with_relu = take("drop_bn_with_relu") == "1";
  s.validate();
  return s;
}

// ------------------------------------------------------------ instantiation

namespace {

std::string unit_name(const std::string& prefix, const BlockSpec& spec, std::size_t branch, const char* what,
                      std::size_t i) {
  std::string out = prefix;
  if (spec.branches() > 1) out += ".branch" + std::to_string(branch);
  return out + "." + what + std::to_string(i);
}

// Channel count seen by the batch norm at conv position i.
std::size_t bn_channels(const BlockSpec& spec, std::size_t i) {
  return spec.pairing == Pairing::kPre ? spec.conv_in(i) : spec.conv_out(i);
}

bool projection_has_bn(const BlockSpec& spec) { return spec.pairing == Pairing::kPost; }

}  // namespace

template <typename T>
void init_block(ParamStore<T>& store, const BlockSpec& spec, const std::string& prefix, std::uint64_t seed) {
  spec.validate();
  for (std::size_t b = 0; b < spec.branches(); ++b) {
    for (std::size_t i = 0; i < spec.conv_count; ++i) {
      const std::string conv = unit_name(prefix, spec, b, "conv", i) + ".weight";
      const std::size_t k = spec.kernel_sizes[i];
      store.add(conv, he_normal<T>(Shape{spec.conv_out(i), spec.conv_in(i), k, k}, seed, conv));
      if (spec.bn_masks[b][i]) add_batchnorm_params(store, unit_name(prefix, spec, b, "bn", i), bn_channels(spec, i));
    }
  }
  if (spec.needs_projection()) {
    const std::string proj = prefix + ".proj.weight";
    store.add(proj, he_normal<T>(Shape{spec.out_channels, spec.in_channels, 1, 1}, seed, proj));
    if (projection_has_bn(spec)) add_batchnorm_params(store, prefix + ".proj_bn", spec.out_channels);
  }
}

template <typename T>
std::vector<Var> apply_block(Graph<T>& g, ParamStore<T>& store, const BlockSpec& spec, const std::string& prefix,
                             const std::vector<Var>& in, Mode mode) {
  const std::size_t want = spec.family == BlockFamily::kDfnMergeRun ? 2 : 1;
  if (in.size() != want) {
    throw ConfigError(std::string(to_string(spec.family)) + " takes " + std::to_string(want) + " input stream(s)");
  }
  auto conv = [&](std::size_t b, std::size_t i, Var x) {
    const Var w = g.param(store, unit_name(prefix, spec, b, "conv", i) + ".weight");
    return conv2d(g, x, w, ConvGeometry{spec.conv_stride(i), spec.kernel_sizes[i] / 2});
  };
  auto bn = [&](std::size_t b, std::size_t i, Var x) {
    return spec.bn_masks[b][i] ? batchnorm(g, store, unit_name(prefix, spec, b, "bn", i), x, mode) : x;
  };
  auto act = [&](std::size_t b, std::size_t i, Var x) { return spec.relu_masks[b][i] ? relu(g, x) : x; };
  auto project = [&](Var x) {
    const Region region = g.region();
    const int stage = g.stage();
    g.set_scope(Region::kShortcut, stage);
    Var y = conv2d(g, x, g.param(store, prefix + ".proj.weight"), ConvGeometry{spec.stride, 0});
    if (projection_has_bn(spec)) y = batchnorm(g, store, prefix + ".proj_bn", y, mode);
    g.set_scope(region, stage);
    return y;
  };

  switch (spec.family) {
    case BlockFamily::kPlainStack: {
      Var x = in[0];
      for (std::size_t i = 0; i < spec.conv_count; ++i) {
        if (spec.pairing == Pairing::kPost) {
          x = act(0, i, bn(0, i, conv(0, i, x)));
        } else {
          x = conv(0, i, act(0, i, bn(0, i, x)));
        }
      }
      return {x};
    }
    case BlockFamily::kResnetBuilding: {
      const Var x = in[0];
      const Var skip = spec.needs_projection() ? project(x) : x;
      Var h = act(0, 0, bn(0, 0, conv(0, 0, x)));
      h = bn(0, 1, conv(0, 1, h));
      return {act(0, 1, add(g, h, skip))};
    }
    case BlockFamily::kResnetPreactBuilding:
    case BlockFamily::kResnetPreactBottleneck: {
      const Var x = in[0];
      const Var pre = act(0, 0, bn(0, 0, x));
      const Var skip = spec.needs_projection() ? project(pre) : x;
      Var h = conv(0, 0, pre);
      for (std::size_t i = 1; i < spec.conv_count; ++i) h = conv(0, i, act(0, i, bn(0, i, h)));
      return {add(g, h, skip)};
    }
    case BlockFamily::kDfnMergeRun: {
      const Var merged = scale(g, add(g, in[0], in[1]), T(0.5));
      const Var skip = spec.needs_projection() ? project(merged) : merged;
      std::vector<Var> out;
      for (std::size_t b = 0; b < 2; ++b) {
        Var h = act(b, 0, bn(b, 0, conv(b, 0, in[b])));
        h = bn(b, 1, conv(b, 1, h));
        out.push_back(act(b, 1, add(g, h, skip)));
      }
      return out;
    }
  }
  throw ConfigError("unhandled block family");
}

// ----------------------------------------------------------------- auditing

template <typename T>
RatioReport audit_graph(const Graph<T>& g, std::size_t param_count, int stage) {
  RatioReport r;
  r.param_count = param_count;
  for (const auto& n : g.nodes()) {
    if (stage >= 0 && n.stage != stage) continue;
    if (n.kind == OpKind::kConv) {
      r.flops_conv += n.flops;
      if (n.region == Region::kTrunk) ++r.n_conv;
      if (n.region == Region::kShortcut) ++r.n_shortcut_conv;
    } else if (n.kind == OpKind::kRelu) {
      r.flops_relu += n.flops;
      if (n.region == Region::kTrunk) ++r.n_relu;
    }
  }
  r.ratio = Ratio{static_cast<int>(r.n_conv), static_cast<int>(r.n_relu)}.reduced();
  return r;
}

RatioReport audit(const BlockSpec& spec, const Shape& input_shape) {
  if (input_shape.rank() != 4 || input_shape[1] != spec.in_channels) {
    throw ShapeError("audit input " + input_shape.str() + " does not match block input channels " +
                     std::to_string(spec.in_channels));
  }
  ParamStore<float> store;
  init_block(store, spec, "block", 0);
  Graph<float> g;
  const Var x = g.input(Tensor<float>(input_shape));
  g.set_scope(Region::kTrunk, 0);
  std::vector<Var> in(spec.branches() > 1 ? 2 : 1, x);
  apply_block(g, store, spec, "block", in, Mode::kEval);
  return audit_graph(g, store.trainable_count());
}

// --------------------------------------------------------------- collapse

Interior Interior::eval_batchnorm(const BatchNormState<double>& bn) {
  Interior it;
  it.kind = InteriorKind::kAffine;
  const std::size_t c = bn.gamma.numel();
  it.scale.resize(c);
  it.shift.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double inv = 1.0 / std::sqrt(bn.running_var[i] + bn.config.epsilon);
    it.scale[i] = bn.gamma[i] * inv;
    it.shift[i] = bn.beta[i] - bn.gamma[i] * bn.running_mean[i] * inv;
  }
  return it;
}

Tensor<double> compose_kernels(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.rank() != 4 || b.rank() != 4 || b.dim(1) != a.dim(0)) {
    throw ShapeError("compose_kernels: " + b.shape().str() + " cannot follow " + a.shape().str());
  }
  const std::size_t mid = a.dim(0), in = a.dim(1), out = b.dim(0);
  const std::size_t ah = a.dim(2), aw = a.dim(3), bh = b.dim(2), bw = b.dim(3);
  Tensor<double> kc(Shape{out, in, ah + bh - 1, aw + bw - 1});
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t p = 0; p < bh; ++p) {
          for (std::size_t q = 0; q < bw; ++q) {
            const double wb = b.at(o, m, p, q);
            for (std::size_t r = 0; r < ah; ++r) {
              for (std::size_t t = 0; t < aw; ++t) kc.at(o, i, p + r, q + t) += wb * a.at(m, i, r, t);
            }
          }
        }
      }
    }
  }
  return kc;
}

CollapseResult collapse_check(const ConvParams<double>& a, const ConvParams<double>& b, const Interior& interior,
                              std::size_t probes, std::uint64_t seed, std::size_t probe_extent) {
  if (a.geometry.stride != 1 || b.geometry.stride != 1) {
    throw ConfigError("collapse_check: strided convolutions do not compose into a single convolution");
  }
  const std::size_t ka = a.kernel.dim(2), kb = b.kernel.dim(2);
  if (a.geometry.padding != ka / 2 || b.geometry.padding != kb / 2 || ka % 2 == 0 || kb % 2 == 0) {
    throw ConfigError("collapse_check: both convolutions must be odd-sized with same-size padding");
  }
  const std::size_t mid = a.kernel.dim(0);
  if (interior.kind == InteriorKind::kAffine && (interior.scale.size() != mid || interior.shift.size() != mid)) {
    throw ShapeError("collapse_check: affine interior must have one scale/shift per intermediate channel");
  }

  CollapseResult res;
  Tensor<double> a_eff = a.kernel;
  res.bias.assign(b.kernel.dim(0), 0.0);
  if (interior.kind == InteriorKind::kAffine) {
    const std::size_t per = a.kernel.numel() / mid;
    for (std::size_t m = 0; m < mid; ++m) {
      for (std::size_t j = 0; j < per; ++j) a_eff[m * per + j] *= interior.scale[m];
    }
    const std::size_t kk = kb * kb;
    for (std::size_t o = 0; o < b.kernel.dim(0); ++o) {
      for (std::size_t m = 0; m < mid; ++m) {
        double s = 0.0;
        for (std::size_t j = 0; j < kk; ++j) s += b.kernel[(o * mid + m) * kk + j];
        res.bias[o] += interior.shift[m] * s;
      }
    }
  }
  res.composed.kernel = compose_kernels(a_eff, b.kernel);
  res.composed.geometry = ConvGeometry{1, a.geometry.padding + b.geometry.padding};

  Stream rng(seed);
  const std::size_t in_ch = a.kernel.dim(1), out_ch = b.kernel.dim(0);
  const std::size_t lo = b.geometry.padding, hi = probe_extent - (kb - 1 - b.geometry.padding);
  for (std::size_t p = 0; p < probes; ++p) {
    Tensor<double> x(Shape{1, in_ch, probe_extent, probe_extent});
    for (auto& v : x.data()) v = rng.normal();
    Tensor<double> z = conv2d(x, a);
    if (interior.kind == InteriorKind::kAffine) {
      const std::size_t hw = probe_extent * probe_extent;
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t j = 0; j < hw; ++j) z[m * hw + j] = interior.scale[m] * z[m * hw + j] + interior.shift[m];
      }
    } else if (interior.kind == InteriorKind::kRelu) {
      z = relu(z);
    }
    const Tensor<double> stacked = conv2d(z, b);
    const Tensor<double> single = conv2d(x, res.composed);
    for (std::size_t o = 0; o < out_ch; ++o) {
      for (std::size_t h = lo; h < hi; ++h) {
        for (std::size_t w = lo; w < hi; ++w) {
          const double d = std::abs(stacked.at(0, o, h, w) - (single.at(0, o, h, w) + res.bias[o]));
          res.max_deviation = std::max(res.max_deviation, d);
        }
      }
    }
  }
  res.collapsed = res.max_deviation < kCollapseTolerance;
  return res;
}

#define PROPNET_INSTANTIATE(T)                                                                              \
  template void init_block(ParamStore<T>&, const BlockSpec&, const std::string&, std::uint64_t);            \
  template std::vector<Var> apply_block(Graph<T>&, ParamStore<T>&, const BlockSpec&, const std::string&,     \
                                        const std::vector<Var>&, Mode);                                     \
  template RatioReport audit_graph(const Graph<T>&, std::size_t, int);

PROPNET_INSTANTIATE(float)
PROPNET_INSTANTIATE(double)

#undef PROPNET_INSTANTIATE

}  // namespace propnet
