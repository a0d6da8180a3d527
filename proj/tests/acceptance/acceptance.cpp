// SPDX-License-Identifier: Apache-2.0
//
// Acceptance report: one PASS/FAIL line per criterion.
//
// Exit status is non-zero when a gating criterion fails. A criterion that
// needs data absent from this machine prints FAIL with "blocked:" and does not
// change the exit status. PRPT_DATA_DIR points at real CIFAR-10 archives;
// PRPT_FULL_PROBE=1 runs the full-size directional probe.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "propnet/block_forge.hpp"
#include "propnet/gradcheck.hpp"
#include "propnet/network.hpp"
#include "propnet/optimizer.hpp"
#include "propnet/sweep.hpp"
#include "propnet/trainer.hpp"

using namespace propnet;
namespace fs = std::filesystem;

namespace {

enum class Verdict { kPass, kFail, kBlocked };

struct Outcome {
  Verdict verdict = Verdict::kPass;
  std::string detail;
};

int gating_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const std::string& name, const std::function<Outcome()>& check, bool gating = true) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {Verdict::kFail, std::string("exception: ") + e.what()};
  }
  std::ostringstream line;
  line << (o.verdict == Verdict::kPass ? "PASS" : "FAIL") << "  " << std::left << std::setw(14) << name << ' '
       << o.detail << " [" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]";
  if (!gating) line << " (informational)";
  std::cout << line.str() << std::endl;
  if (o.verdict == Verdict::kFail && gating) ++gating_failures;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("propnet-acceptance-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// ------------------------------------------------------------------ gradient

Outcome gradient_oracle() {
  struct Case {
    NetworkFamily family;
    std::size_t depth;
    Ratio ratio;
    int removal;
  };
  const std::vector<Case> cases{
      {NetworkFamily::kPlain, 8, {1, 1}, 0},
      {NetworkFamily::kPlain, 8, {2, 1}, 0},
      {NetworkFamily::kResnet, 8, {1, 1}, 0},
      {NetworkFamily::kResnet, 8, {1, 1}, 1},
      {NetworkFamily::kResnet, 8, {1, 1}, 2},
      {NetworkFamily::kResnetPreact, 8, {1, 1}, 0},
      {NetworkFamily::kResnetPreact, 8, {1, 1}, 1},
      {NetworkFamily::kResnetPreact, 8, {1, 1}, 2},
      {NetworkFamily::kResnetPreactBottleneck, 11, {1, 1}, 0},
      {NetworkFamily::kResnetPreactBottleneck, 11, {1, 1}, 1},
      {NetworkFamily::kResnetPreactBottleneck, 11, {1, 1}, 2},
      {NetworkFamily::kResnetPreactBottleneck, 11, {1, 1}, 3},
      {NetworkFamily::kDfnMr1, 8, {1, 1}, 0},
      {NetworkFamily::kDfnMr1, 8, {1, 1}, 1},
      {NetworkFamily::kDfnMr1, 8, {1, 1}, 2},
  };
  double worst = 0.0;
  std::string worst_case;
  double worst_a = 0.0, worst_n = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (const auto& c : cases) {
    NetworkConfig cfg;
    cfg.family = c.family;
    cfg.depth = c.depth;
    cfg.ratio = c.ratio;
    cfg.removal = c.removal;
    cfg.pairing = c.family == NetworkFamily::kResnetPreact || c.family == NetworkFamily::kResnetPreactBottleneck
                      ? Pairing::kPre
                      : Pairing::kPost;
    cfg.stage_widths = {4, 8, 8};
    Model<double> model(cfg);
    Stream rng(mix_seed(11, c.removal + 7 * static_cast<int>(c.family)));
    const auto x = oracle::random_tensor<double>(Shape{2, 3, 8, 8}, rng);
    const std::vector<std::uint32_t> labels{3, 8};
    const GradcheckReport r = gradcheck(
        [&](Graph<double>& g) {
          return softmax_cross_entropy(g, model.forward(g, x, Mode::kTrain), labels);
        },
        model.params());
    checked += r.checked;
    skipped += r.skipped;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_a = r.worst_analytic;
      worst_n = r.worst_numeric;
      worst_case = std::string(to_string(c.family)) + "-d" + std::to_string(c.depth) + " " + variant_label(cfg) +
                   " " + r.worst_param + "[" + std::to_string(r.worst_index) + "]";
    }
  }
  return {worst < 1e-6 ? Verdict::kPass : Verdict::kFail,
          std::to_string(cases.size()) + " networks, " + std::to_string(checked) + " coords (" +
              std::to_string(skipped) + " kink-skipped), max rel err " + fmt(worst) + " at " + worst_case +
              " (analytic " + fmt(worst_a, 10) + ", numeric " + fmt(worst_n, 10) + "; < 1e-6)"};
}

// --------------------------------------------------------------- convolution

Outcome conv_oracle() {
  Stream rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(3), ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t k = 1 + 2 * rng.below(3);
    ConvGeometry geo{1 + rng.below(2), rng.below(k / 2 + 2)};
    const std::size_t min_side = k > 2 * geo.padding ? k - 2 * geo.padding : 1;
    const std::size_t h = min_side + rng.below(7), w = min_side + rng.below(7);
    const auto x = oracle::random_tensor<double>(Shape{n, ci, h, w}, rng);
    const auto kernel = oracle::random_tensor<double>(Shape{co, ci, k, k}, rng);
    const auto y = conv2d(x, kernel, geo);
    const auto y_ref = oracle::conv2d(x, kernel, geo);
    if (y.shape() != y_ref.shape()) return {Verdict::kFail, "shape mismatch on case " + std::to_string(t)};
    const auto gy = oracle::random_tensor<double>(y.shape(), rng);
    const auto grads = conv2d_backward(x, kernel, geo, gy);
    const auto [gx_ref, gw_ref] = oracle::conv2d_backward(x, kernel, geo, gy);
    worst = std::max({worst, oracle::normwise_rel(y, y_ref), oracle::normwise_rel(grads.input, gx_ref),
                      oracle::normwise_rel(grads.kernel, gw_ref)});
  }
  return {worst < 1e-12 ? Verdict::kPass : Verdict::kFail,
          "200 shapes, forward and both gradients, max rel err " + fmt(worst) + " (< 1e-12)"};
}

// ------------------------------------------------------------------ collapse

Outcome collapse_oracle() {
  Stream rng(99);
  auto conv3 = [&](std::size_t o, std::size_t i) {
    ConvParams<double> p;
    p.kernel = oracle::random_tensor<double>(Shape{o, i, 3, 3}, rng);
    p.geometry = ConvGeometry{1, 1};
    return p;
  };
  const auto a = conv3(4, 3);
  const auto b = conv3(5, 4);
  Interior affine;
  affine.kind = InteriorKind::kAffine;
  for (int c = 0; c < 4; ++c) {
    affine.scale.push_back(0.5 + rng.uniform());
    affine.shift.push_back(rng.normal());
  }
  Interior relu;
  relu.kind = InteriorKind::kRelu;
  const auto none_r = collapse_check(a, b, Interior{}, 10);
  const auto affine_r = collapse_check(a, b, affine, 10);
  const auto relu_r = collapse_check(a, b, relu, 10);
  const bool ok = none_r.max_deviation < 1e-10 && affine_r.max_deviation < 1e-10 && relu_r.max_deviation >= 1e-3 &&
                  none_r.composed.kernel.shape()[2] == 5;
  return {ok ? Verdict::kPass : Verdict::kFail, "3x3 o 3x3 -> 5x5, 10 probes: none " + fmt(none_r.max_deviation) +
                                                    ", affine " + fmt(affine_r.max_deviation) + " (< 1e-10); relu " +
                                                    fmt(relu_r.max_deviation) + " (>= 1e-3)"};
}

// ---------------------------------------------------------------- cost/ratio

struct Variant {
  NetworkConfig cfg;
  NetworkSummary summary;
};

std::vector<Variant> audit_group(NetworkFamily family, std::size_t depth, const std::vector<Ratio>& ratios,
                                 const std::vector<int>& removals) {
  std::vector<Variant> out;
  auto add = [&](NetworkConfig cfg) { out.push_back({cfg, summarize(cfg)}); };
  NetworkConfig base;
  base.family = family;
  base.depth = depth;
  if (family == NetworkFamily::kResnetPreact || family == NetworkFamily::kResnetPreactBottleneck) {
    base.pairing = Pairing::kPre;
  }
  for (const auto& r : ratios) {
    auto c = base;
    c.ratio = r;
    add(c);
  }
  for (int k : removals) {
    auto c = base;
    c.removal = k;
    add(c);
  }
  return out;
}

struct Groups {
  std::vector<Variant> plain38, plain62, preact62, bottleneck110;
  double seconds = 0.0;
};

const Groups& groups() {
  static const Groups g = [] {
    const auto t0 = std::chrono::steady_clock::now();
    Groups r;
    r.plain38 = audit_group(NetworkFamily::kPlain, 38, {{1, 1}, {2, 1}, {3, 2}}, {});
    r.plain62 = audit_group(NetworkFamily::kPlain, 62, {{1, 1}, {2, 1}}, {});
    r.preact62 = audit_group(NetworkFamily::kResnetPreact, 62, {}, {0, 1, 2});
    r.bottleneck110 = audit_group(NetworkFamily::kResnetPreactBottleneck, 110, {}, {0, 1, 2, 3});
    r.seconds = seconds_since(t0);
    return r;
  }();
  return g;
}

Outcome cost_claim() {
  const Groups& g = groups();
  std::ostringstream detail;
  bool ok = g.seconds < 10.0;
  for (const auto* group : {&g.plain38, &g.plain62, &g.preact62, &g.bottleneck110}) {
    const auto& ref = group->front().summary.trunk;
    for (std::size_t i = 1; i < group->size(); ++i) {
      const auto& s = (*group)[i].summary.trunk;
      ok = ok && s.param_count == ref.param_count && s.flops_conv == ref.flops_conv && s.flops_relu < ref.flops_relu;
    }
    const auto& cfg = group->front().cfg;
    detail << to_string(cfg.family) << '-' << cfg.depth << ": " << group->size() << " variants, params "
           << ref.param_count << ", relu flops " << fmt(ref.flops_relu, 4) << " -> "
           << fmt(group->back().summary.trunk.flops_relu, 4) << "; ";
  }
  detail << "audit " << fmt(g.seconds, 2) << " s (< 10 s)";
  return {ok ? Verdict::kPass : Verdict::kFail, detail.str()};
}

Outcome ratio_accounting() {
  const Groups& g = groups();
  bool ok = true;
  std::ostringstream detail;
  for (const auto* group : {&g.plain38, &g.plain62}) {
    for (const auto& v : *group) {
      if (v.cfg.ratio != Ratio{2, 1}) continue;
      const auto& t = v.summary.trunk;
      ok = ok && t.ratio.reduced() == Ratio{2, 1} && t.n_conv == 2 * t.n_relu;
      detail << "plain-" << v.cfg.depth << " 2:1 -> " << t.n_conv << ':' << t.n_relu << "; ";
    }
  }
  for (const auto& v : g.bottleneck110) {
    if (v.cfg.removal == 0) continue;
    const auto& t = v.summary.trunk;
    ok = ok && t.ratio.reduced() == Ratio{3, 2} && 2 * t.n_conv == 3 * t.n_relu;
    detail << "bottleneck-110 type" << v.cfg.removal << " -> " << t.n_conv << ':' << t.n_relu << "; ";
  }
  return {ok ? Verdict::kPass : Verdict::kFail, detail.str() + "expect 2:1 and 3:2"};
}

// -------------------------------------------------------------------- loader

std::string check_cifar10(const fs::path& dir, bool& ok) {
  const Dataset train = load_cifar(dir, DatasetSource::kCifar10, Split::kTrain);
  const Dataset test = load_cifar(dir, DatasetSource::kCifar10, Split::kTest);
  std::uint32_t max_label = 0;
  for (auto l : train.labels) max_label = std::max(max_label, l);
  for (auto l : test.labels) max_label = std::max(max_label, l);
  ok = train.size() == 50000 && test.size() == 10000 && max_label < 10 &&
       train.pixels.size() == 50000 * kImageBytes;
  return std::to_string(train.size()) + "/" + std::to_string(test.size()) + " samples, max label " +
         std::to_string(max_label);
}

std::string check_corruption(const fs::path& dir, bool& ok) {
  const Dataset one = make_synthetic(10, 16, 5);
  const fs::path file = dir / "corrupt.bin";
  write_cifar_file(file, one, 0, one.size());
  auto bytes = read_bytes(file);
  const std::size_t rec = cifar_record_bytes(DatasetSource::kCifar10);
  bytes[7 * rec] = 200;
  std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  std::uint64_t label_offset = 0, trunc_offset = 0;
  try {
    load_cifar_file(file, DatasetSource::kCifar10, Split::kTrain);
  } catch (const DataError& e) {
    label_offset = e.offset();
  }
  bytes.resize(bytes.size() - 100);
  bytes[7 * rec] = 1;
  std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  try {
    load_cifar_file(file, DatasetSource::kCifar10, Split::kTrain);
  } catch (const DataError& e) {
    trunc_offset = e.offset();
  }
  ok = label_offset == 7 * rec && trunc_offset == 15 * rec;
  return "bad label at offset " + std::to_string(label_offset) + ", truncation at offset " +
         std::to_string(trunc_offset);
}

Outcome loader_exactness() {
  bool corrupt_ok = false;
  const std::string corrupt = check_corruption(scratch("corrupt"), corrupt_ok);

  const char* env = std::getenv("PRPT_DATA_DIR");
  if (env && *env) {
    const fs::path dir(env);
    if (fs::exists(dir / "data_batch_1.bin") || fs::exists(dir / "cifar-10-batches-bin" / "data_batch_1.bin")) {
      bool ok = false;
      const std::string real = check_cifar10(dir, ok);
      return {ok && corrupt_ok ? Verdict::kPass : Verdict::kFail, "real archives: " + real + "; " + corrupt};
    }
  }
  // Format-exact stand-ins: five 10000-record train batches and a test batch.
  const fs::path dir = scratch("cifar");
  const Dataset all = make_synthetic(10, 60000, 17);
  for (int b = 0; b < 5; ++b) {
    write_cifar_file(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), all, b * 10000, (b + 1) * 10000);
  }
  write_cifar_file(dir / "test_batch.bin", all, 50000, 60000);
  bool gen_ok = false;
  const std::string gen = check_cifar10(dir, gen_ok);
  fs::remove_all(dir);
  if (!gen_ok || !corrupt_ok) return {Verdict::kFail, "generated archives: " + gen + "; " + corrupt};
  return {Verdict::kBlocked, "blocked: no real CIFAR-10 archives under PRPT_DATA_DIR; generated format-exact "
                             "archives: " + gen + "; " + corrupt};
}

// ----------------------------------------------------------------- optimizer

Outcome nesterov_trace() {
  ParamStore<double> store;
  store.add("w", Tensor<double>(Shape{1}, {1.0}));
  SgdOptimizer<double> opt(SgdConfig{0.9, 0.0, true});
  std::vector<double> trace{store.value("w")[0]};
  for (int i = 0; i < 2; ++i) {
    store.grad("w")[0] = 1.0;
    opt.step(store, 0.1);
    trace.push_back(store.value("w")[0]);
  }
  const double err = std::max(std::abs(trace[1] - 0.81), std::abs(trace[2] - 0.539));
  return {err <= 1e-12 ? Verdict::kPass : Verdict::kFail,
          "w: " + fmt(trace[0], 15) + " -> " + fmt(trace[1], 15) + " -> " + fmt(trace[2], 15) + ", err " + fmt(err) +
              " (<= 1e-12)"};
}

// --------------------------------------------------------------- determinism

Outcome determinism() {
  const Dataset train = make_synthetic(10, 64, 1);
  const Dataset test = make_synthetic(10, 32, 2);
  const Normalization norm = compute_normalization(train);
  NetworkConfig net;
  net.ratio = {2, 1};
  net.stage_widths = {4, 8, 8};
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.base_lr = 0.05;
  cfg.seed = 3;

  auto run = [&](const fs::path& dir, std::optional<std::size_t> stop, std::optional<fs::path> resume) {
    Model<float> m(net);
    FitOptions o;
    o.out_dir = dir;
    o.stop_after_epoch = stop;
    o.resume_from = resume;
    fit(m, train, &test, norm, cfg, o);
  };
  const auto a = scratch("det-a"), b = scratch("det-b"), c = scratch("det-c");
  run(a, std::nullopt, std::nullopt);
  run(b, std::nullopt, std::nullopt);
  run(c, 2, std::nullopt);
  fs::copy_file(c / "ckpt-final.bin", c / "epoch2.bin");
  run(c, std::nullopt, c / "epoch2.bin");

  bool same = true, resumed = true;
  for (const char* f : {"ckpt-final.bin", "ckpt-best.bin", "curves.csv"}) {
    same = same && read_bytes(a / f) == read_bytes(b / f);
    resumed = resumed && read_bytes(a / f) == read_bytes(c / f);
  }
  return {same && resumed ? Verdict::kPass : Verdict::kFail,
          std::string("repeat run byte-identical: ") + (same ? "yes" : "no") +
              ", resume at epoch 2 of 4 byte-identical: " + (resumed ? "yes" : "no")};
}

// ------------------------------------------------------------------- overfit

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = make_synthetic(10, 100, 21);
  const Normalization norm = compute_normalization(data);
  std::ostringstream detail;
  bool ok = true;
  for (Ratio r : {Ratio{1, 1}, Ratio{2, 1}}) {
    NetworkConfig net;
    net.ratio = r;
    net.seed = 21;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 10;
    cfg.base_lr = 0.05;
    cfg.augment = false;
    cfg.seed = 21;
    Model<float> m(net);
    const RunRecord rec = fit(m, data, nullptr, norm, cfg);
    std::size_t first_full = 0;
    for (const auto& e : rec.epochs) {
      if (e.train_acc == 1.0 && first_full == 0) first_full = e.epoch;
    }
    const double l0 = rec.epochs.front().train_loss, l1 = rec.epochs.back().train_loss;
    const double drop = 1.0 - l1 / l0;
    ok = ok && first_full != 0 && drop >= 0.9;
    detail << (r == Ratio{1, 1} ? "paired" : "2:1") << ": 100% at epoch " << first_full << ", loss " << fmt(l0)
           << " -> " << fmt(l1) << " (drop " << fmt(100 * drop) << "%); ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  detail << "total " << fmt(secs) << " s (< 60 s)";
  return {ok ? Verdict::kPass : Verdict::kFail, detail.str()};
}

// --------------------------------------------------------------------- probe

Outcome probe() {
  const bool full = std::getenv("PRPT_FULL_PROBE") != nullptr;
  const char* env = std::getenv("PRPT_DATA_DIR");
  const fs::path out = scratch("probe");
  std::string text = "repeats=3 out=" + out.string() + "\n";
  if (full) {
    text += "arch=plain depth=38 dataset=cifar10 subset=5000 epochs=30\n";
  } else {
    text +=
        "arch=plain depth=8 widths=8,16,16 dataset=synthetic synthetic_train=200 synthetic_test=100 epochs=3 "
        "batch_size=20 augment=false\n";
  }
  text += "cell name=paired ratio=1:1\ncell name=two-one ratio=2:1\n";
  const SweepSpec spec = parse_sweep_spec(text, env && *env ? fs::path(env) : fs::path("data"));
  const SweepResult r = run_sweep(spec);
  const std::string csv = sweep_csv(r);
  std::ofstream(out / "sweep.csv") << csv;
  bool ok = !r.any_failure() && r.cells.size() == 2 && csv.find("±") != std::string::npos;
  std::ostringstream detail;
  detail << (full ? "depth-38 CIFAR-10 subset 5000, 30 epochs" : "miniature: depth-8 synthetic, 3 epochs")
         << ", 3 seeds; ";
  for (const auto& c : r.cells) {
    detail << c.name << ' ' << fmt(100 * c.stat.mean, 4) << " ± " << fmt(100 * c.stat.stddev, 3) << "% ("
           << c.finals.size() << " runs)" << (c.winner ? " [winner]" : "") << "; ";
    ok = ok && c.finals.size() == 3;
  }
  detail << "csv " << (out / "sweep.csv").string();
  if (!full) detail << "; set PRPT_FULL_PROBE=1 for the full probe";
  return {ok ? Verdict::kPass : Verdict::kFail, detail.str()};
}

}  // namespace

int main() {
  std::cout << "propnet acceptance\n";
  report("gradcheck", gradient_oracle);
  report("conv-oracle", conv_oracle);
  report("collapse", collapse_oracle);
  report("cost-claim", cost_claim);
  report("ratio", ratio_accounting);
  report("loader", loader_exactness);
  report("nesterov", nesterov_trace);
  report("determinism", determinism);
  report("overfit", overfit);
  report("probe", probe, false);
  std::cout << (gating_failures == 0 ? "all gating criteria passed" : "gating failures: " + std::to_string(gating_failures))
            << std::endl;
  return gating_failures == 0 ? 0 : 1;
}
