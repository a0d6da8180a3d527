// SPDX-License-Identifier: Apache-2.0
//
// propnet: train / eval / audit / gradcheck / collapse-check / sweep.
// Exit codes: 0 ok, 1 usage or configuration, 2 numerical failure, 3 data.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "propnet/block_forge.hpp"
#include "propnet/gradcheck.hpp"
#include "propnet/network.hpp"
#include "propnet/parallel.hpp"
#include "propnet/rng.hpp"
#include "propnet/sweep.hpp"
#include "propnet/trainer.hpp"

namespace {

using namespace propnet;

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kData = 3 };

std::string default_data_dir() {
  const char* env = std::getenv("PRPT_DATA_DIR");
  return env && *env ? env : "data";
}

struct NetFlags {
  std::string arch = "plain";
  std::size_t depth = 8;
  std::string module;
  std::string ratio;
  int removal = 0;
  std::string pairing;
  bool drop_bn_with_relu = false;
  std::string widths = "16,32,64";
  std::uint64_t seed = 1;

  void add_to(CLI::App& app) {
    app.add_option("--arch", arch, "plain | resnet | resnet-preact | resnet-preact-bottleneck | dfn-mr1");
    app.add_option("--depth", depth, "Weighted layers: stem + trunk convolutions + classifier");
    app.add_option("--module", module, "paired | proportional (default: inferred from --ratio / --removal-type)");
    app.add_option("--ratio", ratio, "Conv:ReLU ratio N:M of plain modules (default 1:1, or 2:1 when proportional)");
    app.add_option("--removal-type", removal,
                   "Residual families: 0 keeps all ReLUs; building 1|2, bottleneck 1|2|3, merge-run 1|2");
    app.add_option("--pairing", pairing, "pre | post (plain only; residual families fix their own)");
    app.add_flag("--drop-bn-with-relu", drop_bn_with_relu, "Remove each batch norm whose ReLU is removed");
    app.add_option("--widths", widths, "Stage widths a,b,c");
    app.add_option("--seed", seed, "Initialization and data-order seed");
  }

  NetworkConfig resolve(std::size_t num_classes) const {
    NetworkConfig cfg;
    cfg.family = parse_network_family(arch);
    cfg.depth = depth;
    cfg.num_classes = num_classes;
    cfg.seed = seed;
    cfg.drop_bn_with_relu = drop_bn_with_relu;
    cfg.removal = removal;
    if (!module.empty() && module != "paired" && module != "proportional") {
      throw ConfigError("--module must be 'paired' or 'proportional', got '" + module + "'");
    }
    if (removal < 0) throw ConfigError("--removal-type must be non-negative");
    std::istringstream ws(widths);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ws, part, ',')) {
      if (i == 3) throw ConfigError("--widths expects three values");
      cfg.stage_widths[i++] = std::stoul(part);
    }
    if (i != 3) throw ConfigError("--widths expects three values");

    if (cfg.family == NetworkFamily::kPlain) {
      if (removal != 0) throw ConfigError("--removal-type applies to residual families; plain networks use --ratio");
      cfg.pairing = pairing.empty() ? Pairing::kPost : parse_pairing(pairing);
      if (!ratio.empty()) {
        cfg.ratio = parse_ratio(ratio);
      } else {
        cfg.ratio = module == "proportional" ? Ratio{2, 1} : Ratio{1, 1};
      }
      const Ratio r = cfg.ratio.reduced();
      if (r.relus == 0) throw ConfigError("ratio " + cfg.ratio.str() + " removes every ReLU: linear module rejected");
      if (module == "paired" && r.convs != r.relus) {
        throw ConfigError("--module paired needs ratio 1:1, got " + cfg.ratio.str());
      }
      if (module == "proportional" && r.convs == r.relus) {
        throw ConfigError("--module proportional needs more convolutions than ReLUs, got " + cfg.ratio.str());
      }
    } else {
      if (!ratio.empty()) throw ConfigError("--ratio applies to plain networks; residual families use --removal-type");
      const Pairing own = cfg.family == NetworkFamily::kResnet ? Pairing::kPost : Pairing::kPre;
      if (!pairing.empty() && parse_pairing(pairing) != own) {
        throw ConfigError(std::string(to_string(cfg.family)) + " uses " + to_string(own) + "-activation pairing");
      }
      cfg.pairing = own;
      if (module == "paired" && removal != 0) throw ConfigError("--module paired conflicts with --removal-type");
      if (module == "proportional" && removal == 0) {
        throw ConfigError("--module proportional on a residual family needs --removal-type");
      }
    }
    plan_stages(cfg);
    return cfg;
  }
};

struct DataFlags {
  std::string dataset = "cifar10";
  std::string data_dir = default_data_dir();
  std::size_t subset = 0;
  std::size_t synthetic_train = 1000;
  std::size_t synthetic_test = 200;
  std::size_t classes = 10;

  void add_to(CLI::App& app) {
    app.add_option("--dataset", dataset, "cifar10 | cifar100 | synthetic");
    app.add_option("--data-dir", data_dir, "Dataset root (env PRPT_DATA_DIR)");
    app.add_option("--subset", subset, "Keep N training samples (0 = all)");
    app.add_option("--synthetic-train", synthetic_train, "Synthetic training samples");
    app.add_option("--synthetic-test", synthetic_test, "Synthetic test samples");
    app.add_option("--classes", classes, "Synthetic classes");
  }

  DataSpec resolve() const {
    DataSpec d;
    d.source = parse_dataset_source(dataset);
    d.dir = data_dir;
    d.subset = subset;
    d.synthetic_train = synthetic_train;
    d.synthetic_test = synthetic_test;
    d.synthetic_classes = classes;
    return d;
  }

  std::size_t num_classes() const {
    const auto s = parse_dataset_source(dataset);
    return s == DatasetSource::kCifar100 ? 100 : s == DatasetSource::kSynthetic ? classes : 10;
  }
};

struct TrainFlags {
  std::size_t epochs = 400;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  std::string precision = "single";
  bool no_augment = false;
  std::string out = "out";
  bool verbose = false;
  bool dry_run = false;

  void add_to(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--batch-size", batch_size, "Mini-batch size");
    app.add_option("--lr", lr, "Base learning rate (x0.1 at 50% and 75% of training)");
    app.add_option("--momentum", momentum, "Momentum");
    app.add_option("--nesterov", nesterov, "Nesterov momentum (true|false)");
    app.add_option("--weight-decay", weight_decay, "L2 weight decay");
    app.add_option("--precision", precision, "single | double");
    app.add_flag("--no-augment", no_augment, "Disable crop and flip augmentation");
    app.add_option("--out", out, "Output root; runs go to <out>/<run-id>/");
    app.add_flag("-v,--verbose", verbose, "Per-epoch progress on stderr");
    app.add_flag("--dry-run", dry_run, "Validate the configuration and print its manifest without training");
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.base_lr = lr;
    t.momentum = momentum;
    t.nesterov = nesterov;
    t.weight_decay = weight_decay;
    t.precision = parse_precision(precision);
    t.augment = !no_augment;
    t.seed = seed;
    t.validate();
    return t;
  }
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

int cmd_train(const NetFlags& nf, const DataFlags& df, const TrainFlags& tf) {
  const NetworkConfig net = nf.resolve(df.num_classes());
  const TrainConfig train = tf.resolve(nf.seed);
  const StagePlan plan = plan_stages(net);
  if (!plan.note.empty()) std::cerr << "note: " << plan.note << '\n';
  if (tf.dry_run) {
    std::cout << network_manifest(net) << "train " << train.str() << '\n' << "run " << run_id(net, train) << '\n';
    return kOk;
  }
  const LoadedData data = load_data(df.resolve(), nf.seed);
  const RunResult r = run_training(net, train, data, tf.out, tf.verbose);
  std::cout << "run " << r.id << " dir " << r.dir.string() << '\n'
            << "final train_loss=" << fmt(r.record.epochs.back().train_loss)
            << " train_acc=" << fmt(r.record.final_train_acc()) << " test_acc=" << fmt(r.record.final_test_acc())
            << " best_test_acc=" << fmt(r.record.best_test_acc()) << '\n';
  return kOk;
}

template <typename T>
double eval_as(const NetworkConfig& net, const Checkpoint& ck, const LoadedData& data) {
  Model<T> model(net);
  SgdOptimizer<T> opt(SgdConfig{});
  restore_checkpoint(ck, model, opt);
  return evaluate(model, data.test, data.norm);
}

int cmd_eval(const std::string& run_dir, const std::string& which, const DataFlags& df, std::uint64_t data_seed) {
  const NetworkConfig net = read_run_manifest(run_dir);
  const Checkpoint ck = Checkpoint::load(std::filesystem::path(run_dir) / ("ckpt-" + which + ".bin"));
  const LoadedData data = load_data(df.resolve(), data_seed);
  if (data.train.num_classes != net.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.train.num_classes) + " classes, model has " +
                      std::to_string(net.num_classes));
  }
  const double acc = ck.entry("stem.conv.weight").dtype == DType::kF64 ? eval_as<double>(net, ck, data)
                                                                       : eval_as<float>(net, ck, data);
  std::cout << "checkpoint,samples,test_acc\n" << which << ',' << data.test.size() << ',' << fmt(acc, 9) << '\n';
  return kOk;
}

std::vector<NetworkConfig> variants_of(const NetworkConfig& cfg) {
  std::vector<NetworkConfig> out;
  auto push = [&](NetworkConfig c) {
    try {
      plan_stages(c);
      out.push_back(c);
    } catch (const ConfigError& e) {
      std::cerr << "skipping " << variant_label(c) << ": " << e.what() << '\n';
    }
  };
  if (cfg.family == NetworkFamily::kPlain) {
    NetworkConfig c = cfg;
    c.ratio = {1, 1};
    push(c);
    if (cfg.ratio.reduced().convs != cfg.ratio.reduced().relus) push(cfg);
    return out;
  }
  const int max_removal = cfg.family == NetworkFamily::kResnetPreactBottleneck ? 3 : 2;
  for (int r = 0; r <= max_removal; ++r) {
    NetworkConfig c = cfg;
    c.removal = r;
    push(c);
  }
  return out;
}

int cmd_audit(const NetFlags& nf, std::size_t classes, bool variants, bool per_stage) {
  const NetworkConfig cfg = nf.resolve(classes);
  const std::vector<NetworkConfig> configs = variants ? variants_of(cfg) : std::vector<NetworkConfig>{cfg};
  std::cout << "arch,depth,variant,scope,n_conv,n_relu,n_shortcut_conv,ratio,flops_conv,flops_relu,param_count\n";
  std::cout << std::setprecision(17);
  for (const auto& c : configs) {
    const NetworkSummary s = summarize(c);
    auto row = [&](const std::string& scope, const RatioReport& r) {
      std::cout << to_string(c.family) << ',' << c.depth << ',' << variant_label(c) << ',' << scope << ','
                << r.n_conv << ',' << r.n_relu << ',' << r.n_shortcut_conv << ',' << r.ratio.str() << ','
                << r.flops_conv << ',' << r.flops_relu << ',' << r.param_count << '\n';
    };
    row("network", s.trunk);
    if (per_stage) {
      for (int i = 0; i < 3; ++i) row("stage" + std::to_string(i + 1), s.per_stage[static_cast<std::size_t>(i)]);
    }
  }
  return kOk;
}

int cmd_gradcheck(NetFlags nf, std::size_t batch, std::size_t extent, double threshold, double eps,
                  std::size_t coords, double min_scale) {
  NetworkConfig cfg = nf.resolve(10);
  Model<double> model(cfg);
  Stream rng(mix_seed(cfg.seed, fnv1a("gradcheck-input")));
  Tensor<double> x(Shape{batch, 3, extent, extent});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  std::vector<std::uint32_t> labels(batch);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(cfg.num_classes));
  const LossBuilder build = [&](Graph<double>& g) {
    const Var logits = model.forward(g, x, Mode::kTrain);
    return softmax_cross_entropy(g, logits, labels);
  };
  GradcheckOptions opts;
  opts.eps = eps;
  opts.coords_per_tensor = coords;
  opts.min_scale = min_scale;
  opts.seed = cfg.seed;
  const GradcheckReport r = gradcheck(build, model.params(), opts);
  const bool pass = r.max_rel_error < threshold;
  std::cout << "arch,depth,variant,checked,skipped,max_rel_error,worst_param,worst_index,analytic,numeric,threshold,result\n"
            << to_string(cfg.family) << ',' << cfg.depth << ',' << variant_label(cfg) << ',' << r.checked << ','
            << r.skipped << ',' << std::setprecision(6) << r.max_rel_error << ',' << r.worst_param << ','
            << r.worst_index << ',' << r.worst_analytic << ',' << r.worst_numeric << ',' << threshold << ',' << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kOk : kNumerical;
}

int cmd_collapse(std::size_t ka, std::size_t kb, std::size_t cin, std::size_t cmid, std::size_t cout,
                 const std::string& interior_name, std::size_t probes, std::size_t extent, std::uint64_t seed) {
  if (ka % 2 == 0 || kb % 2 == 0) throw ConfigError("kernel sizes must be odd");
  Stream rng(mix_seed(seed, fnv1a("collapse-kernels")));
  auto kernel = [&](std::size_t o, std::size_t i, std::size_t k) {
    ConvParams<double> p;
    p.kernel = Tensor<double>(Shape{o, i, k, k});
    for (std::size_t j = 0; j < p.kernel.numel(); ++j) p.kernel[j] = rng.normal();
    p.geometry = ConvGeometry{1, k / 2};
    return p;
  };
  const ConvParams<double> a = kernel(cmid, cin, ka);
  const ConvParams<double> b = kernel(cout, cmid, kb);
  Interior interior;
  if (interior_name == "affine") {
    interior.kind = InteriorKind::kAffine;
    for (std::size_t c = 0; c < cmid; ++c) {
      interior.scale.push_back(0.5 + rng.uniform());
      interior.shift.push_back(rng.normal());
    }
  } else if (interior_name == "relu") {
    interior.kind = InteriorKind::kRelu;
  } else if (interior_name != "none") {
    throw ConfigError("--interior must be none, affine or relu");
  }
  const CollapseResult r = collapse_check(a, b, interior, probes, seed, extent);
  std::cout << "ka,kb,interior,composed_kernel,probes,max_deviation,tolerance,result\n"
            << ka << ',' << kb << ',' << interior_name << ',' << r.composed.kernel.shape().dims()[2] << ',' << probes
            << ',' << std::setprecision(6) << r.max_deviation << ',' << kCollapseTolerance << ','
            << (r.collapsed ? "COLLAPSED" : "NOT-COLLAPSED") << '\n';
  return kOk;
}

int cmd_sweep(const std::string& file, const std::string& out_override, bool verbose) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read sweep spec " + file);
  std::stringstream ss;
  ss << in.rdbuf();
  SweepSpec spec = parse_sweep_spec(ss.str(), default_data_dir());
  if (!out_override.empty()) spec.out_dir = out_override;
  const SweepResult result = run_sweep(spec, verbose);
  const std::string csv = sweep_csv(result);
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream(spec.out_dir / "sweep.csv") << csv;
  std::cout << csv;
  for (const auto& c : result.cells) {
    for (const auto& f : c.failures) std::cerr << "failed: " << c.name << ' ' << f << '\n';
  }
  return result.any_failure() ? kNumerical : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"propnet: proportional conv:ReLU networks", "propnet"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::size_t workers = 1;

  NetFlags net;
  DataFlags data;
  TrainFlags train;

  auto* train_cmd = app.add_subcommand("train", "Train one configuration and write its run directory");
  net.add_to(*train_cmd);
  data.add_to(*train_cmd);
  train.add_to(*train_cmd);
  train_cmd->add_option("--workers", workers, "Worker threads (1 = bit-reproducible)");

  std::string run_dir, which = "best";
  DataFlags eval_data;
  std::uint64_t eval_seed = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run's checkpoint on the test split");
  eval_cmd->add_option("run", run_dir, "Run directory holding manifest.txt and checkpoints")->required();
  eval_cmd->add_option("--checkpoint", which, "best | final")->check(CLI::IsMember({"best", "final"}));
  eval_data.add_to(*eval_cmd);
  eval_cmd->add_option("--seed", eval_seed, "Seed for synthetic data and subsets");
  eval_cmd->add_option("--workers", workers, "Worker threads (1 = bit-reproducible)");

  NetFlags audit_net;
  bool variants = false, per_stage = false;
  std::size_t audit_classes = 10;
  auto* audit_cmd = app.add_subcommand("audit", "Count convolutions, ReLUs, FLOPs and parameters");
  audit_net.add_to(*audit_cmd);
  audit_cmd->add_option("--classes", audit_classes, "Classifier outputs");
  audit_cmd->add_flag("--variants", variants, "Audit every removal variant of the family at this depth");
  audit_cmd->add_flag("--per-stage", per_stage, "Add one row per stage");

  NetFlags gc_net;
  gc_net.widths = "4,8,8";
  std::size_t gc_batch = 2, gc_extent = 8, gc_coords = 64;
  double gc_threshold = 1e-6, gc_eps = 1e-5, gc_min_scale = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare backprop with five-point finite differences (double)");
  gc_net.add_to(*gc_cmd);
  gc_cmd->add_option("--batch", gc_batch, "Probe batch size");
  gc_cmd->add_option("--input-size", gc_extent, "Probe image side");
  gc_cmd->add_option("--coords", gc_coords, "Coordinates checked per tensor");
  gc_cmd->add_option("--eps", gc_eps, "Finite-difference step");
  gc_cmd->add_option("--threshold", gc_threshold, "Maximum relative error");
  gc_cmd->add_option("--min-scale", gc_min_scale, "Floor of the relative-error denominator");

  std::size_t ka = 3, kb = 3, cin = 3, cmid = 4, cout = 5, probes = 10, extent = 12;
  std::string interior = "none";
  std::uint64_t collapse_seed = 7;
  auto* collapse_cmd = app.add_subcommand("collapse-check", "Test whether two stacked convolutions are one");
  collapse_cmd->alias("collapse");
  collapse_cmd->add_option("--ka", ka, "First kernel size");
  collapse_cmd->add_option("--kb", kb, "Second kernel size");
  collapse_cmd->add_option("--in", cin, "Input channels");
  collapse_cmd->add_option("--mid", cmid, "Intermediate channels");
  collapse_cmd->add_option("--out", cout, "Output channels");
  collapse_cmd->add_option("--interior", interior, "none | affine | relu");
  collapse_cmd->add_option("--probes", probes, "Random probe inputs");
  collapse_cmd->add_option("--extent", extent, "Probe image side");
  collapse_cmd->add_option("--seed", collapse_seed, "Kernel and probe seed");

  std::string sweep_file, sweep_out;
  bool sweep_verbose = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run every cell of a sweep spec over repeated seeds");
  sweep_cmd->add_option("spec", sweep_file, "Sweep spec file")->required();
  sweep_cmd->add_option("--out", sweep_out, "Override the spec's output root");
  sweep_cmd->add_flag("-v,--verbose", sweep_verbose, "Progress on stderr");
  sweep_cmd->add_option("--workers", workers, "Worker threads (1 = bit-reproducible)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (workers == 0) throw ConfigError("--workers must be at least 1");
    set_worker_count(workers);
    if (*train_cmd) return cmd_train(net, data, train);
    if (*eval_cmd) return cmd_eval(run_dir, which, eval_data, eval_seed);
    if (*audit_cmd) return cmd_audit(audit_net, audit_classes, variants, per_stage);
    if (*gc_cmd) return cmd_gradcheck(gc_net, gc_batch, gc_extent, gc_threshold, gc_eps, gc_coords, gc_min_scale);
    if (*collapse_cmd) return cmd_collapse(ka, kb, cin, cmid, cout, interior, probes, extent, collapse_seed);
    if (*sweep_cmd) return cmd_sweep(sweep_file, sweep_out, sweep_verbose);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
