#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtlab/data/dataset.hpp"
#include "vtlab/training/training.hpp"

namespace vtlab {

/// Ablation arms: the unmodified model, one feature removed, or no image pretraining.
inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"baseline", "noshift", "norelpos", "nopretrain"};
  return names;
}

struct Cell {
  std::string preset;
  double fraction = 1.0;
  std::string ablation = "baseline";
  std::uint64_t seed = 0;

  std::string label() const;
  bool operator==(const Cell&) const = default;
};

struct ExperimentMatrix {
  std::vector<Cell> cells;
  /// Fine-tuning recipe; its seed is replaced by each cell's seed.
  TrainConfig train;
  /// Image pretraining recipe for arms that pretrain.
  TrainConfig pretrain;
  /// When false every arm starts from random init.
  bool use_pretraining = true;
  std::string output;

  /// Throws ConfigError for duplicate cells, unknown presets or ablations.
  void validate() const;
};

nlohmann::json to_json(const ExperimentMatrix& matrix);
ExperimentMatrix matrix_from_json(const nlohmann::json& doc);

/// {baseline, noshift, norelpos, nopretrain} x fractions x seeds.
ExperimentMatrix ablation_matrix(const std::string& preset, const std::vector<double>& fractions, int seeds);
/// Baseline arm of every preset x fractions x seeds.
ExperimentMatrix comparison_matrix(const std::vector<std::string>& presets, const std::vector<double>& fractions,
                                   int seeds);
std::vector<std::string> default_comparison_presets();

/// Preset with the cell's ablation applied and its head sized for `classes`.
ModelConfig cell_config(const Cell& cell, int classes);

struct RunRecord {
  Cell cell;
  std::string cell_hash;
  std::string config_hash;
  std::string dataset_hash;
  std::string status;  // ok or failed
  std::string error;
  Metrics metrics;
  std::string parameter_hash;
  std::int64_t params = 0;
  double gflops = 0;
  std::string started;
  std::string finished;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& doc);

/// Cell identity: hash of model config, split, ablation, seed, recipes and dataset hashes.
std::string cell_hash(const Cell& cell, const ExperimentMatrix& matrix, const Dataset& video, const Dataset* images);

/// Digest of the record set ignoring timestamps and wall-clock.
std::string record_set_hash(const std::vector<RunRecord>& records);

struct RunOptions {
  /// JSON-lines ledger; completed cells found there are not rerun. Empty disables.
  std::string ledger;
  /// Worker count; 0 reads VTLAB_THREADS (default 1).
  int threads = 0;
  /// Called after each cell finishes, from the writer.
  std::function<void(const RunRecord&, std::size_t done, std::size_t total)> progress;
};

/// Runs every cell. Failed cells are recorded with status=failed and the rest
/// continue. Records come back in cell order.
std::vector<RunRecord> run_matrix(const ExperimentMatrix& matrix, const Dataset& video, const Dataset* images,
                                  const RunOptions& options = {});

/// Reads a ledger, skipping a partially written trailing line.
std::vector<RunRecord> read_ledger(const std::string& path);

struct Report {
  /// model, split, ablation, seed, top1, top5, params, flops
  std::string csv;
  /// Per (model, split, ablation) mean and std over seeds.
  nlohmann::json summary;
  /// "<model>_<ablation>.dat" -> "fraction mean_top1 std_top1" lines.
  std::map<std::string, std::string> plots;
};

/// Pure function of the ok records. Throws ReportError when there are none or
/// they come from different datasets.
Report make_report(const std::vector<RunRecord>& records);

struct GroupStats {
  double mean = 0;
  double std = 0;
  int n = 0;
};

/// Sample standard deviation; 0 for a single value.
GroupStats stats_of(const std::vector<double>& values);

}  // namespace vtlab
