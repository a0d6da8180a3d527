// SPDX-License-Identifier: Apache-2.0

#include "propnet/network.hpp"

#include <map>
#include <sstream>

namespace propnet {

const char* to_string(NetworkFamily f) {
  switch (f) {
    case NetworkFamily::kPlain: return "plain";
    case NetworkFamily::kResnet: return "resnet";
    case NetworkFamily::kResnetPreact: return "resnet-preact";
    case NetworkFamily::kResnetPreactBottleneck: return "resnet-preact-bottleneck";
    case NetworkFamily::kDfnMr1: return "dfn-mr1";
  }
  return "?";
}

NetworkFamily parse_network_family(const std::string& s) {
  for (auto f : {NetworkFamily::kPlain, NetworkFamily::kResnet, NetworkFamily::kResnetPreact,
                 NetworkFamily::kResnetPreactBottleneck, NetworkFamily::kDfnMr1}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown architecture '" + s +
                    "' (expected plain, resnet, resnet-preact, resnet-preact-bottleneck or dfn-mr1)");
}

namespace {

BuildOptions build_options(const NetworkConfig& cfg) { return BuildOptions{false, cfg.drop_bn_with_relu}; }

BlockSpec make_block(const NetworkConfig& cfg, const BlockGeometry& geo) {
  const BuildOptions opts = build_options(cfg);
  switch (cfg.family) {
    case NetworkFamily::kPlain: return build_plain_module(cfg.ratio, cfg.pairing, geo, opts);
    case NetworkFamily::kResnet: return build_post_building(cfg.removal, geo, opts);
    case NetworkFamily::kResnetPreact: return build_preact_building(cfg.removal, geo, opts);
    case NetworkFamily::kResnetPreactBottleneck: return build_preact_bottleneck(cfg.removal, geo, opts);
    case NetworkFamily::kDfnMr1: return build_merge_run(cfg.removal, geo, opts);
  }
  throw ConfigError("unhandled network family");
}

bool pre_activation(const NetworkConfig& cfg) {
  switch (cfg.family) {
    case NetworkFamily::kPlain: return cfg.pairing == Pairing::kPre;
    case NetworkFamily::kResnetPreact:
    case NetworkFamily::kResnetPreactBottleneck: return true;
    default: return false;
  }
}

std::size_t block_out_width(const NetworkConfig& cfg, std::size_t stage) {
  const std::size_t w = cfg.stage_widths[stage];
  return cfg.family == NetworkFamily::kResnetPreactBottleneck ? 4 * w : w;
}

std::size_t final_width(const NetworkConfig& cfg) { return block_out_width(cfg, 2); }

}  // namespace

std::size_t convs_per_block(const NetworkConfig& cfg) {
  switch (cfg.family) {
    case NetworkFamily::kPlain: return build_plain_module(cfg.ratio, cfg.pairing, {}, build_options(cfg)).conv_count;
    case NetworkFamily::kResnetPreactBottleneck: return 3;
    default: return 2;
  }
}

StagePlan plan_stages(const NetworkConfig& cfg) {
  StagePlan plan;
  if (cfg.stage_blocks) {
    plan.blocks = *cfg.stage_blocks;
    for (auto b : plan.blocks) {
      if (b == 0) throw ConfigError("every stage needs at least one block");
    }
    return plan;
  }
  const std::size_t c = convs_per_block(cfg);
  const std::size_t period = 3 * c;
  const bool fits = cfg.depth >= period + 2 && (cfg.depth - 2) % period == 0;
  if (fits) {
    const std::size_t n = (cfg.depth - 2) / period;
    plan.blocks = {n, n, n};
    return plan;
  }
  if (cfg.family == NetworkFamily::kPlain && cfg.depth >= period + 2 && (cfg.depth - 2) % c == 0) {
    const std::size_t total = (cfg.depth - 2) / c;
    for (std::size_t s = 0; s < 3; ++s) plan.blocks[s] = total / 3 + (s < total % 3 ? 1 : 0);
    std::ostringstream os;
    os << "depth " << cfg.depth << " is not " << period << "n+2; using uneven stage split (" << plan.blocks[0] << ","
       << plan.blocks[1] << "," << plan.blocks[2] << ")";
    plan.note = os.str();
    return plan;
  }
  const std::size_t below = cfg.depth < period + 2 ? 0 : (cfg.depth - 2) / period;
  std::ostringstream os;
  os << "depth " << cfg.depth << " is not valid for " << to_string(cfg.family) << " (needs " << period
     << "n+2); nearest valid depths:";
  if (below >= 1) os << ' ' << period * below + 2;
  os << ' ' << period * (below + 1) + 2;
  throw ConfigError(os.str());
}

std::vector<BlockPlacement> plan_blocks(const NetworkConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  const StagePlan plan = plan_stages(cfg);
  std::vector<BlockPlacement> out;
  std::size_t in = cfg.stage_widths[0];
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t width = block_out_width(cfg, s);
    for (std::size_t j = 0; j < plan.blocks[s]; ++j) {
      BlockGeometry geo{in, width, (s > 0 && j == 0) ? std::size_t{2} : std::size_t{1}};
      out.push_back(BlockPlacement{make_block(cfg, geo),
                                   "stage" + std::to_string(s + 1) + ".block" + std::to_string(j),
                                   static_cast<int>(s)});
      in = width;
    }
  }
  return out;
}

template <typename T>
Model<T>::Model(NetworkConfig cfg) : cfg_(cfg), stages_(plan_stages(cfg)), blocks_(plan_blocks(cfg)) {
  const std::size_t stem = cfg_.stage_widths[0];
  params_.add("stem.conv.weight", he_normal<T>(Shape{stem, 3, 3, 3}, cfg_.seed, "stem.conv.weight"));
  if (!pre_activation(cfg_)) add_batchnorm_params(params_, "stem.bn", stem);
  for (const auto& b : blocks_) init_block(params_, b.spec, b.prefix, cfg_.seed);
  const std::size_t feat = final_width(cfg_);
  if (pre_activation(cfg_)) add_batchnorm_params(params_, "head.bn", feat);
  params_.add("head.fc.weight", he_normal<T>(Shape{cfg_.num_classes, feat}, cfg_.seed, "head.fc.weight"));
  params_.add("head.fc.bias", Tensor<T>(Shape{cfg_.num_classes}));
}

template <typename T>
Var Model<T>::forward(Graph<T>& g, const Tensor<T>& input, Mode mode) {
  if (input.rank() != 4 || input.dim(1) != 3) {
    throw ShapeError("network input must be [N,3,H,W], got " + input.shape().str());
  }
  g.set_scope(Region::kStem);
  Var x = g.input(input);
  x = conv2d(g, x, g.param(params_, "stem.conv.weight"), ConvGeometry{1, 1});
  if (!pre_activation(cfg_)) x = relu(g, batchnorm(g, params_, "stem.bn", x, mode));

  std::vector<Var> streams{x};
  if (cfg_.family == NetworkFamily::kDfnMr1) streams.push_back(x);
  for (const auto& b : blocks_) {
    g.set_scope(Region::kTrunk, b.stage);
    streams = apply_block(g, params_, b.spec, b.prefix, streams, mode);
  }

  g.set_scope(Region::kHead);
  Var h = streams.size() == 2 ? scale(g, add(g, streams[0], streams[1]), T(0.5)) : streams[0];
  if (pre_activation(cfg_)) h = relu(g, batchnorm(g, params_, "head.bn", h, mode));
  h = flatten(g, global_avg_pool(g, h));
  return linear(g, h, g.param(params_, "head.fc.weight"), g.param(params_, "head.fc.bias"));
}

template <typename T>
std::size_t Model<T>::weighted_layers() const {
  std::size_t trunk = 0;
  for (const auto& b : blocks_) trunk += b.spec.conv_count;
  return trunk + 2;
}

NetworkSummary summarize(const NetworkConfig& cfg, const Shape& input_shape) {
  Model<float> model(cfg);
  Graph<float> g;
  model.forward(g, Tensor<float>(input_shape), Mode::kEval);
  NetworkSummary s;
  const std::size_t params = model.params().trainable_count();
  s.trunk = audit_graph(g, params);
  for (int st = 0; st < 3; ++st) {
    const std::string prefix = "stage" + std::to_string(st + 1) + ".";
    std::size_t stage_params = 0;
    for (const auto& e : model.params().entries()) {
      if (e.trainable && e.name.rfind(prefix, 0) == 0) stage_params += e.value.numel();
    }
    s.per_stage[static_cast<std::size_t>(st)] = audit_graph(g, stage_params, st);
  }
  s.weighted_layers = model.weighted_layers();
  return s;
}

// ---------------------------------------------------------------- manifest

std::string config_line(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "family=" << to_string(cfg.family) << " depth=" << cfg.depth << " ratio=" << cfg.ratio.str()
     << " pairing=" << to_string(cfg.pairing) << " removal=" << cfg.removal
     << " drop_bn_with_relu=" << (cfg.drop_bn_with_relu ? 1 : 0) << " classes=" << cfg.num_classes << " widths="
     << cfg.stage_widths[0] << ',' << cfg.stage_widths[1] << ',' << cfg.stage_widths[2] << " stages=";
  if (cfg.stage_blocks) {
    os << (*cfg.stage_blocks)[0] << ',' << (*cfg.stage_blocks)[1] << ',' << (*cfg.stage_blocks)[2];
  } else {
    os << "auto";
  }
  os << " seed=" << cfg.seed;
  return os.str();
}

namespace {

std::array<std::size_t, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<std::size_t, 3> out{};
  std::istringstream is(v);
  std::string part;
  std::size_t i = 0;
  while (std::getline(is, part, ',')) {
    if (i >= 3) throw ConfigError(key + " needs exactly three values");
    try {
      out[i++] = std::stoul(part);
    } catch (const std::exception&) {
      throw ConfigError("bad value for " + key + ": '" + v + "'");
    }
  }
  if (i != 3) throw ConfigError(key + " needs exactly three values");
  return out;
}

}  // namespace

NetworkConfig parse_config_line(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value in manifest header, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("manifest header missing '" + key + "'");
    return it->second;
  };
  NetworkConfig cfg;
  try {
    cfg.family = parse_network_family(take("family"));
    cfg.depth = std::stoul(take("depth"));
    cfg.ratio = parse_ratio(take("ratio"));
    cfg.pairing = parse_pairing(take("pairing"));
    cfg.removal = std::stoi(take("removal"));
    cfg.drop_bn_with_relu = take("drop_bn_with_relu") == "1";
    cfg.num_classes = std::stoul(take("classes"));
    cfg.stage_widths = parse_triple("widths", take("widths"));
    const std::string stages = take("stages");
    if (stages != "auto") cfg.stage_blocks = parse_triple("stages", stages);
    cfg.seed = std::stoull(take("seed"));
  } catch (const std::invalid_argument&) {
    throw ConfigError("malformed manifest header: " + line);
  } catch (const std::out_of_range&) {
    throw ConfigError("malformed manifest header: " + line);
  }
  return cfg;
}

std::string network_manifest(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << config_line(cfg) << '\n';
  for (const auto& b : plan_blocks(cfg)) os << "block " << b.prefix << ' ' << serialize(b.spec) << '\n';
  return os.str();
}

NetworkConfig parse_manifest(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header) || header.empty()) throw ConfigError("empty network manifest");
  const NetworkConfig cfg = parse_config_line(header);
  const auto expected = plan_blocks(cfg);
  std::string line;
  std::size_t i = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word, prefix;
    ls >> word >> prefix;
    if (word != "block") throw ConfigError("unexpected manifest line: " + line);
    std::string rest;
    std::getline(ls, rest);
    const BlockSpec spec = parse_block_spec(rest);
    if (i >= expected.size() || expected[i].prefix != prefix || !(expected[i].spec == spec)) {
      throw ConfigError("manifest block '" + prefix + "' does not match the header configuration");
    }
    ++i;
  }
  if (i != expected.size()) throw ConfigError("manifest lists " + std::to_string(i) + " blocks, expected " +
                                              std::to_string(expected.size()));
  return cfg;
}

template class Model<float>;
template class Model<double>;

}  // namespace propnet
