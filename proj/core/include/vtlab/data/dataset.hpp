#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtlab/tensor/tensor.hpp"

namespace vtlab {

enum class Task { Spatial, Temporal, Image };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct ClipGeometry {
  std::int64_t t = 8;
  std::int64_t h = 32;
  std::int64_t w = 32;
  std::int64_t c = 3;

  std::int64_t numel() const { return t * h * w * c; }
  Shape shape() const { return {t, h, w, c}; }
  bool operator==(const ClipGeometry&) const = default;
};

struct GenSpec {
  Task task = Task::Spatial;
  std::int64_t n_train = 1000;
  std::int64_t n_val = 500;
  int classes = 10;
  ClipGeometry geometry;
  std::uint64_t seed = 0;

  std::int64_t total() const { return n_train + n_val; }
  bool operator==(const GenSpec&) const = default;
};

/// Renderer parameters of one sample. Positions are in pixels at frame 0,
/// velocities in pixels per frame; motion wraps around the frame borders.
struct SampleParams {
  int shape = 0;  // 0 disc, 1 square
  double hue = 0;
  double saturation = 1;
  double value = 1;
  double size = 0;
  double x0 = 0;
  double y0 = 0;
  double vx = 0;
  double vy = 0;
  double background = 0.45;
  // Background texture drifts with the shape's velocity and is drawn stronger.
  bool pan = false;

  bool operator==(const SampleParams&) const = default;
};

struct VideoSample {
  Tensor clip;  // [T, H, W, C] in [0, 1]
  int label = 0;
  Task task = Task::Spatial;
  std::uint64_t seed = 0;
  SampleParams params;
};

struct SplitSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  bool stratified = true;

  std::string key() const;
  bool operator==(const SplitSpec&) const = default;
};

struct DatasetManifest {
  GenSpec spec;
  /// Byte offset of each sample's payload from the start of the payload block.
  std::vector<std::uint64_t> offsets;
  std::vector<int> labels;
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::map<std::string, std::vector<std::int64_t>> splits;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  int classes() const { return spec.classes; }
  /// Throws FormatError naming the first broken invariant.
  void check() const;
};

/// Samples stored contiguously as 32-bit floats. Labels are balanced
/// (label = index mod classes); the first n_train samples form the train set.
class Dataset {
 public:
  Dataset() = default;
  Dataset(GenSpec spec, std::vector<float> data, std::vector<int> labels, std::vector<SampleParams> params);

  const GenSpec& spec() const { return spec_; }
  std::int64_t size() const { return static_cast<std::int64_t>(labels_.size()); }
  int classes() const { return spec_.classes; }
  const ClipGeometry& geometry() const { return spec_.geometry; }

  std::span<const float> clip(std::int64_t index) const;
  int label(std::int64_t index) const;
  const SampleParams& params(std::int64_t index) const;
  VideoSample sample(std::int64_t index, Dtype dtype = Dtype::F32) const;

  std::vector<std::int64_t> train_indices() const;
  std::vector<std::int64_t> val_indices() const;

  /// [N, T, H, W, C] batch of the given samples.
  Tensor batch(std::span<const std::int64_t> indices, Dtype dtype) const;
  std::vector<int> labels(std::span<const std::int64_t> indices) const;

  const std::vector<float>& data() const { return data_; }
  const std::vector<int>& all_labels() const { return labels_; }
  const std::vector<SampleParams>& all_params() const { return params_; }

  DatasetManifest manifest() const;
  /// Hex digest over geometry, labels and payload bytes.
  std::string content_hash() const;

  bool operator==(const Dataset&) const = default;

 private:
  GenSpec spec_;
  std::vector<float> data_;
  std::vector<int> labels_;
  std::vector<SampleParams> params_;
};

/// One shape per clip, class = shape x hue bin, random class-irrelevant motion.
/// Any single frame determines the label.
Dataset gen_spatial_task(const GenSpec& spec);

/// Class = motion direction (8 compass directions). Shape, colour, speed and
/// start position are drawn independently of the class and motion wraps
/// around the borders, so every single frame has the same distribution for
/// all classes.
Dataset gen_temporal_task(const GenSpec& spec);

/// Frame 0 of the spatial task rendered from the same per-sample seeds.
Dataset gen_image_task(const GenSpec& spec);

/// Dispatches on spec.task.
Dataset generate(const GenSpec& spec);

int max_classes(Task task);

/// Label of a temporal-task clip after reversing its frames.
int temporal_reverse_class(int label);

/// Renders one sample; exposed so tests can re-render a clip with modified parameters.
std::vector<float> render_clip(const SampleParams& params, const ClipGeometry& geometry, std::uint64_t noise_seed);

/// Stratified sampling of train indices, deterministic in (manifest, spec).
/// Every class keeps at least one sample and, at a fixed seed, smaller
/// fractions select subsets of larger ones.
std::vector<std::int64_t> sample_split(const DatasetManifest& manifest, const SplitSpec& spec);

void write_dataset(const Dataset& dataset, const std::string& path,
                   std::span<const SplitSpec> splits = {});
Dataset read_dataset(const std::string& path, DatasetManifest* manifest = nullptr);

nlohmann::json to_json(const GenSpec& spec);
GenSpec gen_spec_from_json(const nlohmann::json& doc);

}  // namespace vtlab
