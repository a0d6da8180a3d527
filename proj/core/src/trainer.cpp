// SPDX-License-Identifier: Apache-2.0

#include "propnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "propnet/parallel.hpp"

namespace propnet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0)) throw ConfigError("lr milestones must be strictly increasing in (0, 1)");
    prev = m;
  }
}

std::string TrainConfig::str() const {
  std::ostringstream os;
  os << std::setprecision(17) << "epochs=" << epochs << " batch_size=" << batch_size << " lr=" << base_lr
     << " momentum=" << momentum << " nesterov=" << (nesterov ? 1 : 0) << " weight_decay=" << weight_decay
     << " milestones=";
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) os << (i ? "," : "") << lr_milestones[i];
  os << " decay=" << lr_decay << " seed=" << seed << " precision=" << to_string(precision)
     << " augment=" << (augment ? 1 : 0);
  return os.str();
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.base_lr;
  for (double m : cfg.lr_milestones) {
    const auto boundary = static_cast<std::size_t>(std::floor(m * static_cast<double>(cfg.epochs)));
    if (epoch >= boundary) lr *= cfg.lr_decay;
  }
  return lr;
}

double RunRecord::best_test_acc() const {
  double best = 0.0;
  for (const auto& e : epochs) {
    if (std::isfinite(e.test_acc)) best = std::max(best, e.test_acc);
  }
  return best;
}

std::string curves_csv(const RunRecord& record) {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,test_acc\n" << std::setprecision(9);
  for (const auto& e : record.epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',';
    if (std::isfinite(e.test_acc)) os << e.test_acc;
    os << '\n';
  }
  return os.str();
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  r.count = values.size();
  if (values.empty()) return r;
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return r;
}

template <typename T>
double accuracy_of(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template <typename T>
std::pair<double, std::size_t> train_step(Model<T>& model, SgdOptimizer<T>& opt, const Batch<T>& batch, double lr) {
  model.params().zero_grad();
  Graph<T> g;
  const Var logits = model.forward(g, batch.images, Mode::kTrain);
  const Var loss = softmax_cross_entropy(g, logits, batch.labels);
  const double loss_value = g.value(loss)[0];
  if (!std::isfinite(loss_value)) throw NumericalError("training loss is not finite");
  const auto pred = argmax_rows(g.value(logits));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i] ? 1 : 0;
  g.backward(loss);
  g.commit_stats(model.params());
  opt.step(model.params(), lr);
  return {loss_value, correct};
}

template <typename T>
double evaluate(Model<T>& model, const Dataset& data, const Normalization& norm, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch<T> b = make_batch<T>(data, idx, norm);
    Graph<T> g;
    const Var logits = model.forward(g, b.images, Mode::kEval);
    const auto pred = argmax_rows(g.value(logits));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const SgdOptimizer<T>& opt, std::uint64_t seed,
                           std::size_t next_epoch, std::size_t steps, double best, const RunRecord& record) {
  Checkpoint ck;
  for (const auto& e : model.params().entries()) ck.put(e.name, e.value);
  for (const auto& e : model.params().entries()) {
    auto it = opt.velocities().find(e.name);
    if (it != opt.velocities().end()) ck.put("velocity/" + e.name, it->second);
  }
  const std::uint64_t rng[2] = {seed, next_epoch};
  ck.put_u64("rng/state", rng);
  const std::uint64_t st[1] = {steps};
  ck.put_u64("train/steps", st);
  ck.put("train/best", Tensor<double>::scalar(best));
  if (!record.epochs.empty()) {
    Tensor<double> hist(Shape{record.epochs.size(), 4});
    for (std::size_t i = 0; i < record.epochs.size(); ++i) {
      const auto& r = record.epochs[i];
      hist[i * 4 + 0] = static_cast<double>(r.epoch);
      hist[i * 4 + 1] = r.train_loss;
      hist[i * 4 + 2] = r.train_acc;
      hist[i * 4 + 3] = r.test_acc;
    }
    ck.put("train/history", hist);
  }
  return ck;
}

namespace {

bool is_state_entry(const std::string& name) {
  return name.rfind("velocity/", 0) == 0 || name.rfind("rng/", 0) == 0 || name.rfind("train/", 0) == 0;
}

}  // namespace

template <typename T>
RestoredState restore_checkpoint(const Checkpoint& ck, Model<T>& model, SgdOptimizer<T>& opt) {
  for (auto& e : model.params().entries()) {
    if (!ck.contains(e.name)) throw CheckpointError("checkpoint is missing tensor '" + e.name + "'");
    Tensor<T> t = ck.get<T>(e.name);
    if (t.shape() != e.value.shape()) {
      throw CheckpointError("shape mismatch for tensor '" + e.name + "': checkpoint " + t.shape().str() +
                            ", model " + e.value.shape().str());
    }
  }
  for (const auto& ce : ck.entries()) {
    if (!is_state_entry(ce.name) && !model.params().contains(ce.name)) {
      throw CheckpointError("checkpoint tensor '" + ce.name + "' does not exist in this model");
    }
  }
  for (auto& e : model.params().entries()) {
    e.value = ck.get<T>(e.name);
    const std::string vname = "velocity/" + e.name;
    if (ck.contains(vname)) {
      Tensor<T> v = ck.get<T>(vname);
      if (v.shape() != e.value.shape()) throw CheckpointError("shape mismatch for tensor '" + vname + "'");
      opt.velocities()[e.name] = std::move(v);
    }
  }
  RestoredState st;
  const auto rng = ck.get_u64("rng/state");
  if (rng.size() != 2) throw CheckpointError("malformed rng/state entry");
  st.seed = rng[0];
  st.next_epoch = rng[1];
  st.steps = ck.get_u64("train/steps").at(0);
  st.best = ck.get<double>("train/best")[0];
  if (ck.contains("train/history")) {
    const Tensor<double> hist = ck.get<double>("train/history");
    for (std::size_t i = 0; i < hist.dim(0); ++i) {
      st.record.epochs.push_back(EpochRecord{static_cast<std::size_t>(hist[i * 4]), hist[i * 4 + 1],
                                             hist[i * 4 + 2], hist[i * 4 + 3]});
    }
  }
  return st;
}

template <typename T>
RunRecord fit(Model<T>& model, const Dataset& train, const Dataset* test, const Normalization& norm,
              const TrainConfig& cfg, const FitOptions& opts) {
  cfg.validate();
  if (train.num_classes != model.config().num_classes) {
    throw ConfigError("dataset has " + std::to_string(train.num_classes) + " classes but the model has " +
                      std::to_string(model.config().num_classes));
  }
  if (train.size() == 0) throw ConfigError("empty training set");
  const auto t0 = std::chrono::steady_clock::now();

  SgdOptimizer<T> opt(SgdConfig{cfg.momentum, cfg.weight_decay, cfg.nesterov});
  RunRecord record;
  std::size_t start = 0, steps = 0;
  double best = -1.0;
  if (opts.resume_from) {
    RestoredState st = restore_checkpoint(Checkpoint::load(*opts.resume_from), model, opt);
    if (st.seed != cfg.seed) throw ConfigError("resume checkpoint was written with a different seed");
    record = std::move(st.record);
    start = st.next_epoch;
    steps = st.steps;
    best = st.best;
  }
  record.config_hash = fnv1a(config_line(model.config()) + " " + cfg.str());
  record.single_worker = worker_count() == 1;
  if (opts.out_dir) fs::create_directories(*opts.out_dir);

  const std::size_t last = std::min(cfg.epochs, opts.stop_after_epoch.value_or(cfg.epochs));
  std::vector<std::size_t> idx;
  for (std::size_t epoch = start; epoch < last; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(end));
      std::optional<AugmentSchedule> aug;
      if (cfg.augment) aug = AugmentSchedule{cfg.seed, epoch};
      const Batch<T> batch = make_batch<T>(train, idx, norm, aug);
      std::pair<double, std::size_t> r;
      try {
        r = train_step(model, opt, batch, lr);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(steps + 1) + "; last good checkpoint retained");
      }
      loss_sum += r.first * static_cast<double>(idx.size());
      correct += r.second;
      ++steps;
    }
    EpochRecord er;
    er.epoch = epoch + 1;
    er.train_loss = loss_sum / static_cast<double>(train.size());
    er.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    er.test_acc = test ? evaluate(model, *test, norm) : std::numeric_limits<double>::quiet_NaN();
    record.epochs.push_back(er);
    if (opts.verbose) {
      std::cerr << "epoch " << er.epoch << " lr " << lr << " loss " << er.train_loss << " train_acc " << er.train_acc;
      if (test) std::cerr << " test_acc " << er.test_acc;
      std::cerr << '\n';
    }

    const double metric = test ? er.test_acc : er.train_acc;
    const bool improved = metric > best;
    if (improved) best = metric;
    if (opts.out_dir) {
      const Checkpoint ck = make_checkpoint(model, opt, cfg.seed, epoch + 1, steps, best, record);
      if (improved) ck.save(*opts.out_dir / "ckpt-best.bin");
      ck.save(*opts.out_dir / "ckpt-final.bin");
      std::ofstream(*opts.out_dir / "curves.csv") << curves_csv(record);
    }
  }
  record.optimizer_steps = steps;
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

#define PROPNET_INSTANTIATE(T)                                                                                 \
  template double accuracy_of(const Tensor<T>&, std::span<const std::uint32_t>);                               \
  template std::pair<double, std::size_t> train_step(Model<T>&, SgdOptimizer<T>&, const Batch<T>&, double);    \
  template double evaluate(Model<T>&, const Dataset&, const Normalization&, std::size_t);                      \
  template Checkpoint make_checkpoint(const Model<T>&, const SgdOptimizer<T>&, std::uint64_t, std::size_t,     \
                                      std::size_t, double, const RunRecord&);                                  \
  template RestoredState restore_checkpoint(const Checkpoint&, Model<T>&, SgdOptimizer<T>&);                   \
  template RunRecord fit(Model<T>&, const Dataset&, const Dataset*, const Normalization&, const TrainConfig&,  \
                         const FitOptions&);

PROPNET_INSTANTIATE(float)
PROPNET_INSTANTIATE(double)

#undef PROPNET_INSTANTIATE

}  // namespace propnet
