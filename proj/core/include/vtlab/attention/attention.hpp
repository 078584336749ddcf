#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "vtlab/attention/grid.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
};

Tensor apply(const LinearParams& p, const Tensor& x);
Tensor apply(const NormParams& p, const Tensor& x);

/// Fused query/key/value projection followed by the output projection.
/// qkv maps D_in to 3 * D_out.
struct AttentionParams {
  std::int64_t heads = 1;
  LinearParams qkv;
  LinearParams proj;
};

/// Receives the post-softmax weights [B, heads, Lq, Lk] of the last call.
struct AttentionProbe {
  Tensor weights;
};

/// Scaled dot-product attention over already-projected q [B, Lq, D] and
/// k, v [B, Lk, D]. `bias` is [heads, Lq, Lk] or [G, heads, Lq, Lk] with
/// B a multiple of G (batch index b uses bias b % G).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads,
                            const Tensor& bias = {}, const LinearParams* out_proj = nullptr,
                            AttentionProbe* probe = nullptr);

/// [N, T, H, W, D] -> [N * nw, Wt * Wh * Ww, D]; windows ordered batch-major.
Tensor window_partition(const TokenGrid& grid, const WindowSpec& spec);
Tensor window_partition(const Tensor& tokens, Extent3 window);
Tensor window_reverse(const Tensor& windows, Extent3 window, std::int64_t batch, Extent3 grid);

/// Region mask for a shifted window configuration; throws ContractError when
/// the shift is zero.
AttentionMask build_shift_mask(Extent3 grid, const WindowSpec& spec);

/// General form: `grid` is the padded extent and `valid` the real one. Padded
/// tokens form their own region. Returns nullopt when nothing is blocked.
std::optional<AttentionMask> build_window_mask(Extent3 grid, Extent3 valid, const WindowSpec& spec,
                                               Dtype dtype = default_dtype());

/// Zero-pads each axis of the grid to a multiple of `window`.
TokenGrid pad_to_window(const TokenGrid& grid, Extent3 window);
TokenGrid crop_padding(const TokenGrid& grid);

/// Roll, partition, masked attention with relative bias, reverse, roll back.
/// `spec` is used as given (callers clamp with effective_window). `table`
/// may be null.
TokenGrid shifted_window_attention(const TokenGrid& grid, const WindowSpec& spec, const RelPosBiasTable* table,
                                   const AttentionParams& params, AttentionProbe* probe = nullptr);

/// Full attention over all T'H'W' tokens.
TokenGrid global_st_attention(const TokenGrid& grid, const AttentionParams& params, const Tensor& bias = {},
                              AttentionProbe* probe = nullptr);
TokenGrid global_mhra(const TokenGrid& grid, const AttentionParams& params, AttentionProbe* probe = nullptr);

/// Self-attention over a token sequence [B, L, D] with a fused qkv projection.
Tensor self_attention(const Tensor& x, const AttentionParams& params, const Tensor& bias = {},
                      AttentionProbe* probe = nullptr);

struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;
};

Tensor apply(const MlpParams& p, const Tensor& x);

/// Pre-norm attention and MLP, each with a residual connection.
struct EncoderBlockParams {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  MlpParams mlp;
};

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, const Tensor& bias = {});

enum class FrameRepr { ClassToken, MeanPool };

struct FactorizedParams {
  FrameRepr frame_repr = FrameRepr::ClassToken;
  Tensor frame_cls;  // [D], used with ClassToken
  std::vector<EncoderBlockParams> spatial;
  NormParams spatial_norm;
  Tensor temporal_pos;  // [T', D] or undefined
  std::vector<EncoderBlockParams> temporal;
};

/// Per-frame spatial encoder output [N, T', D].
Tensor factorized_frame_representations(const TokenGrid& grid, const FactorizedParams& p);

/// Spatial encoder per frame, temporal encoder across frames, mean over time: [N, D].
Tensor factorized_encoder(const TokenGrid& grid, const FactorizedParams& p);

/// Per-axis additive tables, each [2 * extent - 1, heads].
struct DecomposedRelPos {
  Extent3 extent;
  Tensor t, h, w;
};

/// Grid coordinates of a pooled grid in input-grid units.
std::vector<Extent3> pooled_coords(Extent3 pooled, Extent3 stride);

/// bias(i, j) = bT[dt] + bH[dh] + bW[dw] with d = kv - q + extent - 1; [heads, Lq, Lk].
Tensor decomposed_relpos_bias(std::span<const Extent3> q_coords, std::span<const Extent3> kv_coords,
                              const DecomposedRelPos& tables);

struct PoolParams {
  Tensor weight;  // depthwise [kt, kh, kw, 1, D]
  NormParams norm;
};

struct PooledAttentionParams {
  AttentionParams attn;
  Extent3 kernel{3, 3, 3};
  std::optional<PoolParams> pool_q, pool_k, pool_v;
  std::optional<DecomposedRelPos> relpos;
};

/// Strided depthwise conv pooling followed by layer norm; identity for stride 1.
TokenGrid pool_tokens(const TokenGrid& grid, Extent3 stride, Extent3 kernel, const PoolParams* params);

/// Max-pooled skip path matching a query stride.
TokenGrid pool_skip(const TokenGrid& grid, Extent3 stride);

/// Output grid extent for a query stride.
Extent3 pooled_extent(Extent3 grid, Extent3 stride, Extent3 kernel);

TokenGrid pooled_attention(const TokenGrid& grid, Extent3 q_stride, Extent3 kv_stride,
                           const PooledAttentionParams& params, AttentionProbe* probe = nullptr);

struct LocalMhraParams {
  LinearParams value;
  Tensor dw_weight;  // [kt, kh, kw, 1, D]
  Tensor dw_bias;    // [D]
  LinearParams proj;
};

/// Value projection, depthwise neighborhood aggregation, pointwise mixing.
TokenGrid local_mhra(const TokenGrid& grid, Extent3 kernel, const LocalMhraParams& params);

}  // namespace vtlab
