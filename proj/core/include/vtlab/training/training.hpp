#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtlab/data/dataset.hpp"
#include "vtlab/models/model.hpp"

namespace vtlab {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  /// Fraction of all steps spent ramping the learning rate up from 0.
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  Dtype precision = Dtype::F32;
  /// Horizontal flips; ignored on the temporal task, whose labels are directions.
  bool augment_flip = false;
  /// Random cyclic translation of up to this many pixels per axis.
  std::int64_t augment_shift = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_grad_norm = 0;

  /// Throws ConfigError listing every violated invariant.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Linear warmup from 0, then cosine decay reaching 0 on the last step.
double learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

struct Metrics {
  std::vector<double> epoch_losses;
  /// Accuracy percentages keyed by k.
  std::map<int, double> topk;
  std::int64_t evaluated = 0;
  std::int64_t steps = 0;
  double wall_seconds = 0;

  double top1() const;
  double top5() const;
  bool operator==(const Metrics&) const = default;
};

nlohmann::json to_json(const Metrics& metrics);
Metrics metrics_from_json(const nlohmann::json& doc);

/// Percentage of rows of logits [N, C] whose label is among the k largest
/// entries; equal logits rank the lower class index first.
double topk_accuracy(const Tensor& logits, std::span<const int> labels, int k);

/// A sample counts as a top-k hit when fewer than k classes outrank its
/// label; equal logits rank the lower class index first.
Metrics evaluate(const Model& model, const Dataset& dataset, std::span<const std::int64_t> indices,
                 const std::vector<int>& ks = {1, 5}, int batch_size = 32);

/// Trains in place on `train`, then evaluates on `eval` (skipped when empty).
/// Throws NumericError with the step and learning rate if the loss stops being finite.
Metrics train(Model& model, const Dataset& dataset, std::span<const std::int64_t> train,
              std::span<const std::int64_t> eval, const TrainConfig& config);

/// Digest of parameter names, shapes and values.
std::string parameter_hash(const ParamSet& params);

struct Provenance {
  std::string image_config;
  std::string image_config_hash;
  std::string image_dataset_hash;
  Metrics pretrain;
  std::vector<InflationEntry> inflation;

  bool operator==(const Provenance&) const;
};

nlohmann::json to_json(const Provenance& provenance);
Provenance provenance_from_json(const nlohmann::json& doc);

struct PretrainResult {
  Model model;
  Provenance provenance;
};

/// Trains the single-frame restriction of `video_config` on the image task
/// and inflates it. Non-inflated parameters come from the video model's own
/// init at `config.seed`.
PretrainResult pretrain_and_inflate(const Dataset& images, std::span<const std::int64_t> train,
                                    std::span<const std::int64_t> eval, const ModelConfig& video_config,
                                    const TrainConfig& config);

struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  Metrics metrics;
  std::optional<Provenance> provenance;
  ParamSet params;
};

/// "VTCK", u32 version, u64 header length, JSON header, raw parameters, CRC32.
void save_checkpoint(const std::string& path, const Model& model, std::int64_t step, const Metrics& metrics,
                     const Provenance* provenance = nullptr);
Checkpoint load_checkpoint(const std::string& path);
/// Rebuilds the model a checkpoint was taken from.
Model model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace vtlab
