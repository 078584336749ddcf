#include "vtlab/attention/attention.hpp"

#include <cmath>

#include "vtlab/errors.hpp"

namespace vtlab {

Tensor apply(const LinearParams& p, const Tensor& x) { return linear(x, p.weight, p.bias); }

Tensor apply(const NormParams& p, const Tensor& x) { return layer_norm(x, p.gamma, p.beta); }

Tensor apply(const MlpParams& p, const Tensor& x) { return apply(p.fc2, gelu(apply(p.fc1, x))); }

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads, const Tensor& bias,
                            const LinearParams* out_proj, AttentionProbe* probe) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("multi_head_attention: q, k, v must be [B, L, D], got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::int64_t B = q.dim(0), Lq = q.dim(1), D = q.dim(2), Lk = k.dim(1);
  if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != D || v.dim(2) != D || v.dim(1) != Lk) {
    throw DimensionError("multi_head_attention: inconsistent q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (heads < 1 || D % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(D) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::int64_t dh = D / heads;
  Tensor qh = permute(reshape(q, {B, Lq, heads, dh}), {0, 2, 1, 3});
  Tensor kt = permute(reshape(k, {B, Lk, heads, dh}), {0, 2, 3, 1});
  Tensor vh = permute(reshape(v, {B, Lk, heads, dh}), {0, 2, 1, 3});
  Tensor scores = scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (bias.defined()) {
    const bool grouped = bias.rank() == 4;
    const std::int64_t G = grouped ? bias.dim(0) : 1;
    const Shape want = grouped ? Shape{G, heads, Lq, Lk} : Shape{heads, Lq, Lk};
    if (bias.shape() != want || B % G != 0) {
      throw DimensionError("multi_head_attention: bias " + shape_str(bias.shape()) + " incompatible with batch " +
                           std::to_string(B) + ", heads " + std::to_string(heads) + ", " + std::to_string(Lq) + "x" +
                           std::to_string(Lk) + " scores");
    }
    if (grouped && G != B) {
      scores = reshape(add(reshape(scores, {B / G, G, heads, Lq, Lk}), bias), {B, heads, Lq, Lk});
    } else {
      scores = add(scores, bias);
    }
  }
  Tensor attn = softmax(scores, -1);
  if (probe) probe->weights = attn;
  Tensor out = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {B, Lq, D});
  return out_proj ? apply(*out_proj, out) : out;
}

Tensor self_attention(const Tensor& x, const AttentionParams& params, const Tensor& bias, AttentionProbe* probe) {
  Tensor qkv = apply(params.qkv, x);
  const std::int64_t d = qkv.dim(-1) / 3;
  const int last = qkv.rank() - 1;
  return multi_head_attention(slice(qkv, last, 0, d), slice(qkv, last, d, 2 * d), slice(qkv, last, 2 * d, 3 * d),
                              params.heads, bias, &params.proj, probe);
}

TokenGrid global_st_attention(const TokenGrid& grid, const AttentionParams& params, const Tensor& bias,
                              AttentionProbe* probe) {
  validate_grid(grid);
  const Extent3 e = grid.extents();
  Tensor seq = reshape(grid.tokens, {grid.batch(), e.volume(), grid.channels()});
  Tensor out = self_attention(seq, params, bias, probe);
  return {reshape(out, {grid.batch(), e.t, e.h, e.w, out.dim(-1)}), grid.patch, grid.pad};
}

TokenGrid global_mhra(const TokenGrid& grid, const AttentionParams& params, AttentionProbe* probe) {
  return global_st_attention(grid, params, {}, probe);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, const Tensor& bias) {
  Tensor h = add(x, self_attention(apply(p.norm1, x), p.attn, bias));
  return add(h, apply(p.mlp, apply(p.norm2, h)));
}

Tensor factorized_frame_representations(const TokenGrid& grid, const FactorizedParams& p) {
  validate_grid(grid);
  const std::int64_t N = grid.batch(), D = grid.channels();
  const Extent3 e = grid.extents();
  Tensor x = reshape(grid.tokens, {N * e.t, e.h * e.w, D});
  if (p.frame_repr == FrameRepr::ClassToken) {
    if (!p.frame_cls.defined()) throw ConfigError("factorized encoder: class-token mode needs a frame class token");
    Tensor cls = add(Tensor::zeros({N * e.t, 1, D}, x.dtype()), p.frame_cls);
    x = concat({cls, x}, 1);
  }
  for (const auto& block : p.spatial) x = encoder_block(x, block);
  if (p.spatial_norm.gamma.defined()) x = apply(p.spatial_norm, x);
  Tensor frames = p.frame_repr == FrameRepr::ClassToken ? reshape(slice(x, 1, 0, 1), {N * e.t, D}) : mean(x, 1);
  return reshape(frames, {N, e.t, D});
}

Tensor factorized_encoder(const TokenGrid& grid, const FactorizedParams& p) {
  Tensor x = factorized_frame_representations(grid, p);
  if (p.temporal_pos.defined()) x = add(x, p.temporal_pos);
  for (const auto& block : p.temporal) x = encoder_block(x, block);
  return mean(x, 1);
}

}  // namespace vtlab
