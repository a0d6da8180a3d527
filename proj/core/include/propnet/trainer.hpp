// SPDX-License-Identifier: Apache-2.0
//
// Training loop: shuffled mini-batches, SGD with Nesterov momentum, step
// learning-rate decay, per-epoch metrics and checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "propnet/checkpoint.hpp"
#include "propnet/data.hpp"
#include "propnet/network.hpp"
#include "propnet/optimizer.hpp"

namespace propnet {

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t batch_size = 64;
  double base_lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  /// Fractions of `epochs` at which the rate is multiplied by lr_decay.
  std::vector<double> lr_milestones{0.5, 0.75};
  double lr_decay = 0.1;
  std::uint64_t seed = 1;
  Precision precision = Precision::kSingle;
  bool augment = true;

  void validate() const;
  std::string str() const;
};

/// Learning rate in effect during (0-based) epoch.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;  // NaN without a test set
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::uint64_t config_hash = 0;
  bool single_worker = true;
  std::size_t optimizer_steps = 0;

  double final_train_acc() const { return epochs.empty() ? 0.0 : epochs.back().train_acc; }
  double final_test_acc() const { return epochs.empty() ? 0.0 : epochs.back().test_acc; }
  double best_test_acc() const;
};

/// curves.csv: epoch,train_loss,train_acc,test_acc
std::string curves_csv(const RunRecord& record);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t count = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct FitOptions {
  /// Where ckpt-final.bin / ckpt-best.bin / curves.csv go. Nothing is written
  /// when unset.
  std::optional<std::filesystem::path> out_dir;
  /// Resume from this checkpoint (written by an earlier fit).
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many total epochs even if cfg.epochs is larger; used to
  /// simulate an interrupted run.
  std::optional<std::size_t> stop_after_epoch;
  /// Print one line per epoch to stderr.
  bool verbose = false;
};

/// Full training state as a checkpoint: parameters and buffers under their
/// own names, velocities under "velocity/<name>", plus "rng/state"
/// (seed, next epoch), "train/steps", "train/best" and "train/history".
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const SgdOptimizer<T>& opt, std::uint64_t seed,
                           std::size_t next_epoch, std::size_t steps, double best, const RunRecord& record);

struct RestoredState {
  std::uint64_t seed = 0;
  std::size_t next_epoch = 0;
  std::size_t steps = 0;
  double best = 0.0;
  RunRecord record;
};

/// Loads parameters, buffers and velocities into model/opt. Every model
/// tensor must be present with the same shape; the error names the tensor.
template <typename T>
RestoredState restore_checkpoint(const Checkpoint& ck, Model<T>& model, SgdOptimizer<T>& opt);

template <typename T>
RunRecord fit(Model<T>& model, const Dataset& train, const Dataset* test, const Normalization& norm,
              const TrainConfig& cfg, const FitOptions& opts = {});

/// Top-1 accuracy with eval-mode batch norm; argmax ties go to the lowest
/// class index.
template <typename T>
double evaluate(Model<T>& model, const Dataset& data, const Normalization& norm, std::size_t batch_size = 256);

/// Accuracy of a fixed set of logits against labels.
template <typename T>
double accuracy_of(const Tensor<T>& logits, std::span<const std::uint32_t> labels);

/// One optimizer step on a batch: forward in train mode, mean loss,
/// backward, running-stat commit, SGD update. Returns the batch loss and the
/// number of correct predictions.
template <typename T>
std::pair<double, std::size_t> train_step(Model<T>& model, SgdOptimizer<T>& opt, const Batch<T>& batch, double lr);

}  // namespace propnet
