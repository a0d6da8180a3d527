// SPDX-License-Identifier: Apache-2.0
//
// Run plumbing shared by `train` and `sweep`: dataset selection, run
// directories and repeated-seed aggregation.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "propnet/data.hpp"
#include "propnet/network.hpp"
#include "propnet/trainer.hpp"

namespace propnet {

struct DataSpec {
  DatasetSource source = DatasetSource::kCifar10;
  std::filesystem::path dir;
  /// Training samples to keep, chosen by seed; 0 keeps all.
  std::size_t subset = 0;
  /// Synthetic only.
  std::size_t synthetic_train = 1000;
  std::size_t synthetic_test = 200;
  std::size_t synthetic_classes = 10;

  std::string str() const;
};

struct LoadedData {
  Dataset train;
  Dataset test;
  Normalization norm;
};

/// Subsets the training split with `seed` when requested; the test split is
/// always complete.
LoadedData load_data(const DataSpec& spec, std::uint64_t seed);

/// "<family>-d<depth>-<variant>-s<seed>-<hash>", stable across runs.
std::string run_id(const NetworkConfig& net, const TrainConfig& train);

struct RunResult {
  std::string id;
  std::filesystem::path dir;
  RunRecord record;
  /// Final test accuracy, or final train accuracy when there is no test set.
  double final_metric = 0.0;
};

/// Trains one configuration into out_root/<run-id>/ (manifest.txt,
/// curves.csv, ckpt-best.bin, ckpt-final.bin).
RunResult run_training(const NetworkConfig& net, const TrainConfig& train, const LoadedData& data,
                       const std::filesystem::path& out_root, bool verbose = false);

/// Network configuration of a run directory written by run_training; the
/// trailing train/data lines of its manifest are ignored.
NetworkConfig read_run_manifest(const std::filesystem::path& run_dir);

struct SweepCell {
  std::string name;
  NetworkConfig net;
  TrainConfig train;
  DataSpec data;
};

struct SweepSpec {
  std::vector<SweepCell> cells;
  std::size_t repeats = 5;
  std::filesystem::path out_dir = "out";
};

/// Text format, one directive per line, '#' starts a comment:
///   key=value ...                  settings shared by every cell
///   cell name=<id> key=value ...   one cell; its keys override the shared ones
/// Keys: arch depth ratio pairing removal drop_bn_with_relu dataset data_dir
/// subset epochs batch_size lr momentum nesterov weight_decay seed precision
/// augment repeats out widths classes synthetic_train synthetic_test.
/// data_dir falls back to default_data_dir.
SweepSpec parse_sweep_spec(const std::string& text, const std::filesystem::path& default_data_dir = {});

struct CellResult {
  std::string name;
  NetworkConfig net;
  std::vector<double> finals;  // one per successful repeat
  MeanStd stat;
  std::vector<std::string> failures;
  bool winner = false;
};

struct SweepResult {
  std::vector<CellResult> cells;
  bool any_failure() const;
};

/// Repeat r of a cell uses seed + r for both initialization and data order.
/// A failing repeat is recorded and the sweep moves on.
SweepResult run_sweep(const SweepSpec& spec, bool verbose = false);

/// cell,arch,depth,variant,runs,mean,std,mean_pm_std,winner,failures
std::string sweep_csv(const SweepResult& result);

/// Fills stat and winner from finals. The winner is the highest mean among
/// cells with at least one run; ties go to the earlier cell.
void aggregate(SweepResult& result);

/// "2:1", "paired", "removal=2", ... for tables.
std::string variant_label(const NetworkConfig& net);

}  // namespace propnet
