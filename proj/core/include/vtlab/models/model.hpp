#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vtlab/models/config.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

/// Named parameters in registration order.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::int64_t total_elements() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed, Dtype dtype);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const;
  ParamSet& params();
  const ParamSet& params() const;
  Dtype dtype() const;

  /// video [N, T, H, W, C] -> logits [N, classes].
  Tensor forward(const Tensor& video) const;
  /// Pooled features feeding the classification head, [N, D].
  Tensor features(const Tensor& video) const;
  /// Output of every stage before any merge, in order.
  std::vector<TokenGrid> stage_outputs(const Tensor& video) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Parameters are drawn from a generator seeded by `seed`; equal seeds give
/// bit-identical parameters.
Model build_model(const ModelConfig& config, std::uint64_t seed, Dtype dtype = default_dtype());

/// Non-overlapping 3D patches linearly embedded: conv3d with kernel = stride = patch.
TokenGrid patch_embed(const Tensor& video, Extent3 patch, const Tensor& weight, const Tensor& bias);

/// 2x2 spatial neighbourhoods concatenated (4C), normalized, projected to out_dim.
TokenGrid patch_merging(const TokenGrid& grid, const NormParams& norm, const LinearParams& reduction);

/// Makes the last two stages Global.
ModelConfig llgg_transform(const ModelConfig& config);

/// Single-frame counterpart with every temporal extent set to 1.
ModelConfig spatial_restriction(const ModelConfig& config);

/// Ablation arms.
ModelConfig without_shifted_window(const ModelConfig& config);
ModelConfig without_relpos_bias(const ModelConfig& config);

/// How each target parameter was obtained during inflation.
struct InflationEntry {
  std::string name;
  std::string rule;  // copy, temporal_mean, temporal_replicate, fresh
};

struct InflationResult {
  ParamSet params;
  std::vector<InflationEntry> map;
};

/// Builds target parameters from a trained single-frame model. Parameters
/// missing from the source are taken from `fresh` (the target's own init).
InflationResult inflate_2d_to_3d(const ParamSet& image_params, const ModelConfig& image_config,
                                 const ModelConfig& target_config, const ParamSet& fresh);

/// Copies values of `source` into same-named tensors of `target`.
void load_params(ParamSet& target, const ParamSet& source);

}  // namespace vtlab
