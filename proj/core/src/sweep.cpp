// SPDX-License-Identifier: Apache-2.0

#include "propnet/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "propnet/rng.hpp"

namespace propnet {

namespace fs = std::filesystem;

std::string DataSpec::str() const {
  std::ostringstream os;
  os << "dataset=" << to_string(source);
  if (source == DatasetSource::kSynthetic) {
    os << " classes=" << synthetic_classes << " synthetic_train=" << synthetic_train
       << " synthetic_test=" << synthetic_test;
  } else {
    os << " data_dir=" << dir.string();
  }
  os << " subset=" << subset;
  return os.str();
}

namespace {

Dataset slice(const Dataset& d, std::size_t begin, std::size_t end, Split split) {
  Dataset out;
  out.source = d.source;
  out.split = split;
  out.num_classes = d.num_classes;
  out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.pixels.assign(d.pixels.begin() + static_cast<std::ptrdiff_t>(begin * kImageBytes),
                    d.pixels.begin() + static_cast<std::ptrdiff_t>(end * kImageBytes));
  return out;
}

}  // namespace

LoadedData load_data(const DataSpec& spec, std::uint64_t seed) {
  LoadedData out;
  if (spec.source == DatasetSource::kSynthetic) {
    const Dataset all = make_synthetic(spec.synthetic_classes, spec.synthetic_train + spec.synthetic_test, seed);
    out.train = slice(all, 0, spec.synthetic_train, Split::kTrain);
    out.test = slice(all, spec.synthetic_train, all.size(), Split::kTest);
  } else {
    out.train = load_cifar(spec.dir, spec.source, Split::kTrain);
    out.test = load_cifar(spec.dir, spec.source, Split::kTest);
  }
  if (spec.subset != 0) {
    if (spec.subset > out.train.size()) {
      throw ConfigError("subset " + std::to_string(spec.subset) + " exceeds the " +
                        std::to_string(out.train.size()) + " training samples");
    }
    out.train = subset(out.train, spec.subset, seed);
    out.norm = compute_normalization(out.train);
  } else if (spec.source == DatasetSource::kSynthetic) {
    out.norm = compute_normalization(out.train);
  } else {
    out.norm = cached_normalization(spec.dir, out.train);
  }
  return out;
}

std::string variant_label(const NetworkConfig& net) {
  if (net.family == NetworkFamily::kPlain) {
    const Ratio r = net.ratio.reduced();
    return r.convs == r.relus ? "paired" : r.str();
  }
  if (net.removal == 0) return "paired";
  switch (net.family) {
    case NetworkFamily::kResnetPreactBottleneck:
    case NetworkFamily::kDfnMr1:
      return "type" + std::to_string(net.removal);
    default:
      return net.removal == 1 ? "first" : "second";
  }
}

std::string run_id(const NetworkConfig& net, const TrainConfig& train) {
  std::string variant = variant_label(net);
  std::replace(variant.begin(), variant.end(), ':', '-');
  if (net.drop_bn_with_relu) variant += "-nobn";
  char hash[9];
  std::snprintf(hash, sizeof(hash), "%08x",
                static_cast<unsigned>(fnv1a(config_line(net) + " " + train.str()) & 0xffffffffu));
  return std::string(to_string(net.family)) + "-d" + std::to_string(net.depth) + "-" + variant + "-s" +
         std::to_string(train.seed) + "-" + hash;
}

namespace {

template <typename T>
RunRecord fit_as(const NetworkConfig& net, const TrainConfig& train, const LoadedData& data, const fs::path& dir,
                 bool verbose) {
  Model<T> model(net);
  FitOptions opts;
  opts.out_dir = dir;
  opts.verbose = verbose;
  return fit(model, data.train, data.test.size() ? &data.test : nullptr, data.norm, train, opts);
}

}  // namespace

NetworkConfig read_run_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.txt");
  if (!in) throw ConfigError("no manifest.txt in " + run_dir.string());
  std::string network, line;
  while (std::getline(in, line)) {
    if (line.rfind("train ", 0) == 0 || line.rfind("data ", 0) == 0) continue;
    network += line + '\n';
  }
  return parse_manifest(network);
}

RunResult run_training(const NetworkConfig& net, const TrainConfig& train, const LoadedData& data,
                       const fs::path& out_root, bool verbose) {
  RunResult r;
  r.id = run_id(net, train);
  r.dir = out_root / r.id;
  fs::create_directories(r.dir);
  {
    std::ofstream m(r.dir / "manifest.txt");
    m << network_manifest(net) << "train " << train.str() << '\n'
      << "data train=" << data.train.size() << " test=" << data.test.size() << '\n';
  }
  r.record = train.precision == Precision::kDouble ? fit_as<double>(net, train, data, r.dir, verbose)
                                                   : fit_as<float>(net, train, data, r.dir, verbose);
  r.final_metric = data.test.size() ? r.record.final_test_acc() : r.record.final_train_acc();
  return r;
}

namespace {

std::vector<std::pair<std::string, std::string>> tokens_of(std::istringstream& line, std::size_t lineno) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string tok;
  while (line >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("sweep spec line " + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
    }
    out.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

void apply_key(SweepCell& c, const std::string& k, const std::string& v) {
  if (k == "name") {
    c.name = v;
  } else if (k == "arch") {
    c.net.family = parse_network_family(v);
  } else if (k == "depth") {
    c.net.depth = to_size(k, v);
  } else if (k == "ratio") {
    c.net.ratio = parse_ratio(v);
  } else if (k == "pairing") {
    c.net.pairing = parse_pairing(v);
  } else if (k == "removal") {
    c.net.removal = static_cast<int>(to_size(k, v));
  } else if (k == "drop_bn_with_relu") {
    c.net.drop_bn_with_relu = to_bool(k, v);
  } else if (k == "widths") {
    std::istringstream is(v);
    std::string part;
    std::size_t i = 0;
    while (std::getline(is, part, ',')) {
      if (i == 3) throw ConfigError("widths: expected three values");
      c.net.stage_widths[i++] = to_size(k, part);
    }
    if (i != 3) throw ConfigError("widths: expected three values");
  } else if (k == "dataset") {
    c.data.source = parse_dataset_source(v);
  } else if (k == "data_dir") {
    c.data.dir = v;
  } else if (k == "subset") {
    c.data.subset = to_size(k, v);
  } else if (k == "classes") {
    c.data.synthetic_classes = to_size(k, v);
  } else if (k == "synthetic_train") {
    c.data.synthetic_train = to_size(k, v);
  } else if (k == "synthetic_test") {
    c.data.synthetic_test = to_size(k, v);
  } else if (k == "epochs") {
    c.train.epochs = to_size(k, v);
  } else if (k == "batch_size") {
    c.train.batch_size = to_size(k, v);
  } else if (k == "lr") {
    c.train.base_lr = to_double(k, v);
  } else if (k == "momentum") {
    c.train.momentum = to_double(k, v);
  } else if (k == "nesterov") {
    c.train.nesterov = to_bool(k, v);
  } else if (k == "weight_decay") {
    c.train.weight_decay = to_double(k, v);
  } else if (k == "seed") {
    c.train.seed = to_size(k, v);
  } else if (k == "precision") {
    c.train.precision = parse_precision(v);
  } else if (k == "augment") {
    c.train.augment = to_bool(k, v);
  } else {
    throw ConfigError("unknown sweep key '" + k + "'");
  }
}

}  // namespace

SweepSpec parse_sweep_spec(const std::string& text, const fs::path& default_data_dir) {
  SweepSpec spec;
  std::vector<std::pair<std::string, std::string>> shared;
  std::vector<std::vector<std::pair<std::string, std::string>>> cells;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream line(raw);
    std::string first;
    if (!(line >> first)) continue;
    if (first == "cell") {
      cells.push_back(tokens_of(line, lineno));
      continue;
    }
    std::istringstream whole(raw);
    for (auto& [k, v] : tokens_of(whole, lineno)) {
      if (k == "repeats") {
        spec.repeats = to_size(k, v);
      } else if (k == "out") {
        spec.out_dir = v;
      } else if (k == "name") {
        throw ConfigError("sweep spec line " + std::to_string(lineno) + ": name is only valid on a cell line");
      } else {
        shared.emplace_back(k, v);
      }
    }
  }
  if (cells.empty()) throw ConfigError("sweep spec defines no cells");
  if (spec.repeats == 0) throw ConfigError("repeats must be at least 1");

  for (std::size_t i = 0; i < cells.size(); ++i) {
    SweepCell c;
    c.data.dir = default_data_dir;
    for (const auto& [k, v] : shared) apply_key(c, k, v);
    for (const auto& [k, v] : cells[i]) apply_key(c, k, v);
    if (c.name.empty()) c.name = "cell" + std::to_string(i + 1);
    if (c.data.source == DatasetSource::kCifar100) c.net.num_classes = 100;
    if (c.data.source == DatasetSource::kSynthetic) c.net.num_classes = c.data.synthetic_classes;
    c.train.validate();
    plan_stages(c.net);
    for (const auto& other : spec.cells) {
      if (other.name == c.name) throw ConfigError("duplicate sweep cell name '" + c.name + "'");
    }
    spec.cells.push_back(std::move(c));
  }
  return spec;
}

bool SweepResult::any_failure() const {
  return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.failures.empty(); });
}

void aggregate(SweepResult& result) {
  const CellResult* best = nullptr;
  for (auto& c : result.cells) {
    c.stat = mean_std(c.finals);
    c.winner = false;
    if (!c.finals.empty() && (best == nullptr || c.stat.mean > best->stat.mean)) best = &c;
  }
  for (auto& c : result.cells) c.winner = &c == best;
}

SweepResult run_sweep(const SweepSpec& spec, bool verbose) {
  if (spec.cells.empty()) throw ConfigError("sweep spec defines no cells");
  SweepResult result;
  std::map<std::string, LoadedData> cache;
  for (const auto& cell : spec.cells) {
    CellResult cr;
    cr.name = cell.name;
    cr.net = cell.net;
    const std::string key = cell.data.str() + " seed=" + std::to_string(cell.train.seed);
    const LoadedData* data = nullptr;
    try {
      auto it = cache.find(key);
      if (it == cache.end()) it = cache.emplace(key, load_data(cell.data, cell.train.seed)).first;
      data = &it->second;
    } catch (const std::exception& e) {
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        cr.failures.push_back("seed " + std::to_string(cell.train.seed + r) + ": " + e.what());
      }
      result.cells.push_back(std::move(cr));
      continue;
    }
    for (std::size_t r = 0; r < spec.repeats; ++r) {
      NetworkConfig net = cell.net;
      TrainConfig train = cell.train;
      net.seed = train.seed = cell.train.seed + r;
      net.num_classes = data->train.num_classes;
      try {
        const RunResult run = run_training(net, train, *data, spec.out_dir, verbose);
        cr.finals.push_back(run.final_metric);
        if (verbose) {
          std::cerr << cell.name << " seed " << train.seed << ": " << run.final_metric << " (" << run.id << ")\n";
        }
      } catch (const std::exception& e) {
        cr.failures.push_back("seed " + std::to_string(train.seed) + ": " + e.what());
        if (verbose) std::cerr << cell.name << " seed " << train.seed << " failed: " << e.what() << '\n';
      }
    }
    result.cells.push_back(std::move(cr));
  }
  aggregate(result);
  return result;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "cell,arch,depth,variant,runs,mean,std,mean_pm_std,winner,failures\n";
  for (const auto& c : result.cells) {
    std::string failures;
    for (std::size_t i = 0; i < c.failures.size(); ++i) failures += (i ? "; " : "") + c.failures[i];
    std::ostringstream pm;
    pm << std::fixed << std::setprecision(2) << 100.0 * c.stat.mean << " ± " << 100.0 * c.stat.stddev;
    os << csv_field(c.name) << ',' << to_string(c.net.family) << ',' << c.net.depth << ','
       << csv_field(variant_label(c.net)) << ',' << c.finals.size() << ',' << std::setprecision(9) << c.stat.mean
       << ',' << c.stat.stddev << ',' << (c.finals.empty() ? "" : pm.str()) << ',' << (c.winner ? 1 : 0) << ','
       << csv_field(failures) << '\n';
  }
  return os.str();
}

}  // namespace propnet
