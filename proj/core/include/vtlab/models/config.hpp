#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtlab/attention/attention.hpp"
#include "vtlab/attention/grid.hpp"

namespace vtlab {

enum class AttentionKind { LocalWindow, ShiftedLocalWindow, Global, LocalMHRA, PooledAttention, Conv2D, Conv3D };
enum class PositionalEmbedding { None, Absolute, Relative };
enum class Family { VideoSwin, Uniformer, MViT, ViViT, ResNet, Linear };
enum class MergeKind { PatchMerging, Conv };

std::string to_string(AttentionKind kind);
std::string to_string(Family family);

bool is_windowed(AttentionKind kind);
bool is_convolutional(AttentionKind kind);

struct PoolSpec {
  /// Query stride of the stage's first block; later blocks use (1,1,1).
  Extent3 q_stride{1, 1, 1};
  /// Key/value stride of every block, relative to that block's input grid.
  Extent3 kv_stride{1, 1, 1};
  Extent3 kernel{3, 3, 3};
  bool operator==(const PoolSpec&) const = default;
};

struct StageSpec {
  int depth = 1;
  std::int64_t dim = 0;
  std::int64_t heads = 1;
  AttentionKind kind = AttentionKind::Global;
  std::optional<WindowSpec> window;
  std::optional<PoolSpec> pool_strides;
  /// Halve H' and W' after the stage and switch to the next stage's width.
  bool merge_after = false;
  /// LocalMHRA aggregation kernel.
  Extent3 kernel{3, 3, 3};
  /// Conv stages: bottleneck width, stride of the first block, conv_a temporal kernel per block.
  std::int64_t inner_dim = 0;
  std::int64_t spatial_stride = 1;
  std::vector<std::int64_t> temporal_kernels;

  bool operator==(const StageSpec&) const = default;
};

struct StemPool {
  Extent3 kernel{1, 3, 3};
  Extent3 stride{1, 2, 2};
  Extent3 padding{0, 1, 1};
  bool operator==(const StemPool&) const = default;
};

struct ModelConfig {
  static constexpr int kSchemaVersion = 1;

  std::string name;
  Family family = Family::VideoSwin;
  Extent3 patch_size{2, 4, 4};
  std::int64_t in_channels = 3;
  /// Patch embedding conv; kernel defaults to patch_size when unset.
  std::optional<Extent3> embed_kernel;
  Extent3 embed_padding{0, 0, 0};
  bool embed_bias = true;
  /// Embedding width; 0 means the first stage's width.
  std::int64_t embed_dim = 0;
  bool embed_norm = false;
  std::optional<StemPool> stem_pool;
  /// Stage index after which a (2,1,1) temporal max pool runs; -1 for none.
  int temporal_pool_after = -1;
  std::vector<StageSpec> stages;
  std::int64_t num_classes = 10;
  bool use_relpos_bias = false;
  bool use_shifted_window = false;
  PositionalEmbedding positional_embedding = PositionalEmbedding::None;
  /// Depthwise 3x3x3 conv position encoding at the start of every block.
  bool conv_position_embedding = false;
  Extent3 dpe_kernel{3, 3, 3};
  MergeKind merge_kind = MergeKind::PatchMerging;
  std::int64_t mlp_ratio = 4;
  bool final_norm = true;
  /// Factorized encoder: temporal blocks after the per-frame spatial stage.
  int temporal_depth = 0;
  FrameRepr frame_repr = FrameRepr::ClassToken;
  /// Clip geometry (T, H, W) the accounting and positional tables assume.
  Extent3 input_size{8, 32, 32};
  /// Views per prediction; FLOP totals are reported per clip times this.
  int reported_views = 1;

  Extent3 resolved_embed_kernel() const { return embed_kernel.value_or(patch_size); }
  std::int64_t resolved_embed_dim() const {
    return embed_dim > 0 ? embed_dim : (stages.empty() ? in_channels : stages.front().dim);
  }
  bool factorized() const { return temporal_depth > 0; }

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError listing every violated invariant.
void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Canonical serialization used for hashing.
std::string canonical_string(const ModelConfig& config);
std::uint64_t config_hash(const ModelConfig& config);

/// FNV-1a over bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace vtlab
