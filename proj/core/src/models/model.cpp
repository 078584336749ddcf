#include "vtlab/models/model.hpp"

#include <algorithm>
#include <cmath>

#include "geometry.hpp"
#include "vtlab/errors.hpp"

namespace vtlab {

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  if (value.is_leaf()) value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter " + name);
  return entries_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter " + name);
  return entries_[it->second].second;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

std::int64_t ParamSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

namespace {

constexpr double kInitStd = 0.02;

Extent3 half(Extent3 k) { return {k.t / 2, k.h / 2, k.w / 2}; }

struct DepthwiseConv {
  Tensor weight;  // [kt, kh, kw, 1, D]
  Tensor bias;
  Extent3 kernel;
};

Tensor apply_depthwise(const DepthwiseConv& c, const Tensor& x) {
  return conv3d(x, c.weight, c.bias, {{1, 1, 1}, half(c.kernel), x.dim(-1)});
}

// Parameters are drawn in registration order from one stream.
class Builder {
 public:
  Builder(ParamSet& params, std::uint64_t seed, Dtype dtype) : params_(params), rng_(seed), dtype_(dtype) {}

  Tensor normal(const std::string& name, const Shape& shape, double stddev) {
    return params_.add(name, trunc_normal(shape, rng_, stddev, dtype_));
  }
  Tensor constant(const std::string& name, const Shape& shape, double value) {
    return params_.add(name, Tensor::full(shape, value, dtype_));
  }
  LinearParams linear(const std::string& name, std::int64_t in, std::int64_t out, bool bias = true) {
    LinearParams p;
    p.weight = normal(name + ".weight", {in, out}, kInitStd);
    if (bias) p.bias = constant(name + ".bias", {out}, 0.0);
    return p;
  }
  NormParams norm(const std::string& name, std::int64_t dim) {
    NormParams p;
    p.gamma = constant(name + ".gamma", {dim}, 1.0);
    p.beta = constant(name + ".beta", {dim}, 0.0);
    return p;
  }
  /// Weight [kt, kh, kw, cin_per_group, cout].
  Tensor conv(const std::string& name, Extent3 k, std::int64_t cin_per_group, std::int64_t cout) {
    const double fan_in = static_cast<double>(k.volume() * cin_per_group);
    return normal(name, {k.t, k.h, k.w, cin_per_group, cout}, 1.0 / std::sqrt(fan_in));
  }
  DepthwiseConv depthwise(const std::string& name, Extent3 k, std::int64_t dim) {
    return {conv(name + ".weight", k, 1, dim), constant(name + ".bias", {dim}, 0.0), k};
  }
  MlpParams mlp(const std::string& name, std::int64_t dim, std::int64_t ratio) {
    MlpParams p;
    p.fc1 = linear(name + ".fc1", dim, ratio * dim);
    p.fc2 = linear(name + ".fc2", ratio * dim, dim);
    return p;
  }
  AttentionParams attention(const std::string& name, std::int64_t din, std::int64_t dout, std::int64_t heads) {
    AttentionParams p;
    p.heads = heads;
    p.qkv = linear(name + ".qkv", din, 3 * dout);
    p.proj = linear(name + ".proj", dout, dout);
    return p;
  }

 private:
  ParamSet& params_;
  Rng rng_;
  Dtype dtype_;
};

struct Block {
  AttentionKind kind = AttentionKind::Global;
  std::optional<DepthwiseConv> dpe;
  NormParams norm1;
  AttentionParams attn;
  std::optional<RelPosBiasTable> table;
  WindowSpec window;
  LocalMhraParams local;
  Extent3 kernel{3, 3, 3};
  PooledAttentionParams pooled;
  Extent3 q_stride{1, 1, 1};
  Extent3 kv_stride{1, 1, 1};
  std::optional<LinearParams> res_proj;
  NormParams norm2;
  MlpParams mlp;
};

struct ConvBlock {
  std::int64_t kt = 1;
  std::int64_t stride = 1;
  Tensor conv_a, conv_b, conv_c;
  NormParams norm_a, norm_b, norm_c;
  Tensor shortcut;
  NormParams shortcut_norm;
};

struct Stage {
  std::vector<Block> blocks;
  std::vector<ConvBlock> conv_blocks;
  bool merge = false;
  NormParams merge_norm;
  LinearParams merge_reduction;
  Tensor merge_conv, merge_bias;
};

bool uses_uniformer_blocks(const ModelConfig& c) { return c.family == Family::Uniformer; }

}  // namespace

struct Model::Impl {
  ModelConfig config;
  Dtype dtype;
  ParamSet params;

  Tensor embed_weight, embed_bias;
  std::optional<NormParams> embed_norm;
  Tensor pos_embed;
  std::vector<Stage> stages;
  FactorizedParams factorized;
  std::optional<NormParams> final_norm;
  LinearParams head;

  Impl(ModelConfig cfg, std::uint64_t seed, Dtype dt) : config(std::move(cfg)), dtype(dt) {
    validate(config);
    build(seed);
  }

  void build(std::uint64_t seed);
  Block make_block(Builder& b, const std::string& name, const StageSpec& s, int index, std::int64_t din,
                   Extent3 grid);
  ConvBlock make_conv_block(Builder& b, const std::string& name, const StageSpec& s, int index, std::int64_t din);

  TokenGrid embed(const Tensor& video) const;
  TokenGrid run_block(const Block& block, const TokenGrid& grid) const;
  Tensor run_conv_block(const ConvBlock& block, const Tensor& x) const;
  TokenGrid merge(const Stage& stage, const TokenGrid& grid) const;
  Tensor features(const Tensor& video, std::vector<TokenGrid>* stage_outputs) const;
};

Block Model::Impl::make_block(Builder& b, const std::string& name, const StageSpec& s, int index, std::int64_t din,
                              Extent3 grid) {
  const ModelConfig& c = config;
  Block blk;
  blk.kind = s.kind;
  if (c.conv_position_embedding) blk.dpe = b.depthwise(name + ".dpe", c.dpe_kernel, din);
  blk.norm1 = b.norm(name + ".norm1", din);
  const std::string an = name + ".attn";
  switch (s.kind) {
    case AttentionKind::LocalWindow:
    case AttentionKind::ShiftedLocalWindow: {
      blk.attn = b.attention(an, din, s.dim, s.heads);
      blk.window = *s.window;
      if (s.kind == AttentionKind::ShiftedLocalWindow && index % 2 == 0) blk.window.shift = {0, 0, 0};
      if (c.use_relpos_bias) {
        RelPosBiasTable t;
        t.window = s.window->window;
        t.heads = s.heads;
        t.table = b.normal(an + ".relpos_table", {RelPosBiasTable::entries(t.window), s.heads}, kInitStd);
        blk.table = t;
      }
      break;
    }
    case AttentionKind::Global:
      blk.attn = b.attention(an, din, s.dim, s.heads);
      break;
    case AttentionKind::LocalMHRA:
      blk.kernel = s.kernel;
      blk.local.value = b.linear(an + ".value", din, s.dim);
      blk.local.dw_weight = b.conv(an + ".dw.weight", s.kernel, 1, s.dim);
      blk.local.dw_bias = b.constant(an + ".dw.bias", {s.dim}, 0.0);
      blk.local.proj = b.linear(an + ".proj", s.dim, s.dim);
      break;
    case AttentionKind::PooledAttention: {
      const PoolSpec& ps = *s.pool_strides;
      blk.q_stride = index == 0 ? ps.q_stride : Extent3{1, 1, 1};
      blk.kv_stride = ps.kv_stride;
      auto& p = blk.pooled;
      p.kernel = ps.kernel;
      p.attn = b.attention(an, din, s.dim, s.heads);
      auto pool = [&](const char* which) {
        PoolParams pp;
        pp.weight = b.conv(an + "." + which + ".weight", ps.kernel, 1, s.dim);
        pp.norm = b.norm(an + "." + which + ".norm", s.dim);
        return pp;
      };
      if (blk.q_stride != Extent3{1, 1, 1}) p.pool_q = pool("pool_q");
      if (blk.kv_stride != Extent3{1, 1, 1}) {
        p.pool_k = pool("pool_k");
        p.pool_v = pool("pool_v");
      }
      if (c.use_relpos_bias) {
        DecomposedRelPos r;
        r.extent = grid;
        r.t = b.normal(an + ".relpos_t", {2 * grid.t - 1, s.heads}, kInitStd);
        r.h = b.normal(an + ".relpos_h", {2 * grid.h - 1, s.heads}, kInitStd);
        r.w = b.normal(an + ".relpos_w", {2 * grid.w - 1, s.heads}, kInitStd);
        p.relpos = r;
      }
      if (din != s.dim) blk.res_proj = b.linear(name + ".res_proj", din, s.dim);
      break;
    }
    case AttentionKind::Conv2D:
    case AttentionKind::Conv3D:
      throw ContractError("convolutional stage routed to attention block builder");
  }
  blk.norm2 = b.norm(name + ".norm2", s.dim);
  blk.mlp = b.mlp(name + ".mlp", s.dim, c.mlp_ratio);
  return blk;
}

ConvBlock Model::Impl::make_conv_block(Builder& b, const std::string& name, const StageSpec& s, int index,
                                       std::int64_t din) {
  ConvBlock blk;
  blk.kt = s.temporal_kernels[static_cast<std::size_t>(index)];
  blk.stride = index == 0 ? s.spatial_stride : 1;
  blk.conv_a = b.conv(name + ".conv_a.weight", {blk.kt, 1, 1}, din, s.inner_dim);
  blk.norm_a = b.norm(name + ".norm_a", s.inner_dim);
  blk.conv_b = b.conv(name + ".conv_b.weight", {1, 3, 3}, s.inner_dim, s.inner_dim);
  blk.norm_b = b.norm(name + ".norm_b", s.inner_dim);
  blk.conv_c = b.conv(name + ".conv_c.weight", {1, 1, 1}, s.inner_dim, s.dim);
  blk.norm_c = b.norm(name + ".norm_c", s.dim);
  if (din != s.dim || blk.stride != 1) {
    blk.shortcut = b.conv(name + ".shortcut.weight", {1, 1, 1}, din, s.dim);
    blk.shortcut_norm = b.norm(name + ".shortcut.norm", s.dim);
  }
  return blk;
}

void Model::Impl::build(std::uint64_t seed) {
  const ModelConfig& c = config;
  Builder b(params, seed, dtype);
  const std::int64_t classes = c.num_classes;

  if (c.family == Family::Linear) {
    head = b.linear("head", c.in_channels, classes);
    return;
  }

  const detail::ModelGeometry geo = detail::trace_geometry(c, c.input_size);
  const std::int64_t edim = c.resolved_embed_dim();
  embed_weight = b.conv("embed.weight", c.resolved_embed_kernel(), c.in_channels, edim);
  if (c.embed_bias) embed_bias = b.constant("embed.bias", {edim}, 0.0);
  if (c.embed_norm) embed_norm = b.norm("embed.norm", edim);
  if (c.positional_embedding == PositionalEmbedding::Absolute) {
    const Extent3 g = geo.stem;
    const Shape shape = c.factorized() ? Shape{g.h, g.w, edim} : Shape{g.t, g.h, g.w, edim};
    pos_embed = b.normal("pos_embed", shape, kInitStd);
  }

  if (c.factorized()) {
    const StageSpec& s = c.stages.front();
    auto& f = factorized;
    f.frame_repr = c.frame_repr;
    if (c.frame_repr == FrameRepr::ClassToken) f.frame_cls = b.normal("frame_cls", {s.dim}, kInitStd);
    for (int j = 0; j < s.depth; ++j) {
      const std::string n = "stages.0.blocks." + std::to_string(j);
      EncoderBlockParams e;
      e.norm1 = b.norm(n + ".norm1", s.dim);
      e.attn = b.attention(n + ".attn", s.dim, s.dim, s.heads);
      e.norm2 = b.norm(n + ".norm2", s.dim);
      e.mlp = b.mlp(n + ".mlp", s.dim, c.mlp_ratio);
      f.spatial.push_back(e);
    }
    f.spatial_norm = b.norm("spatial_norm", s.dim);
    f.temporal_pos = b.normal("temporal_pos", {geo.stem.t, s.dim}, kInitStd);
    for (int j = 0; j < c.temporal_depth; ++j) {
      const std::string n = "temporal.blocks." + std::to_string(j);
      EncoderBlockParams e;
      e.norm1 = b.norm(n + ".norm1", s.dim);
      e.attn = b.attention(n + ".attn", s.dim, s.dim, s.heads);
      e.norm2 = b.norm(n + ".norm2", s.dim);
      e.mlp = b.mlp(n + ".mlp", s.dim, c.mlp_ratio);
      f.temporal.push_back(e);
    }
  } else {
    std::int64_t dim = edim;
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
      const StageSpec& s = c.stages[i];
      Stage st;
      const std::string sn = "stages." + std::to_string(i);
      for (int j = 0; j < s.depth; ++j) {
        const std::string n = sn + ".blocks." + std::to_string(j);
        if (is_convolutional(s.kind)) {
          st.conv_blocks.push_back(make_conv_block(b, n, s, j, dim));
        } else {
          st.blocks.push_back(make_block(b, n, s, j, dim, geo.stages[i].blocks[static_cast<std::size_t>(j)].in));
        }
        dim = s.dim;
      }
      if (s.merge_after) {
        st.merge = true;
        const std::int64_t next = c.stages[i + 1].dim;
        if (c.merge_kind == MergeKind::PatchMerging) {
          st.merge_norm = b.norm(sn + ".merge.norm", 4 * dim);
          st.merge_reduction = b.linear(sn + ".merge.reduction", 4 * dim, next, false);
        } else {
          st.merge_conv = b.conv(sn + ".merge.conv.weight", {1, 2, 2}, dim, next);
          st.merge_bias = b.constant(sn + ".merge.conv.bias", {next}, 0.0);
          st.merge_norm = b.norm(sn + ".merge.norm", next);
        }
        dim = next;
      }
      stages.push_back(std::move(st));
    }
  }
  const std::int64_t out_dim = c.stages.back().dim;
  if (c.final_norm) final_norm = b.norm("norm", out_dim);
  head = b.linear("head", out_dim, classes);
}

TokenGrid Model::Impl::embed(const Tensor& video) const {
  const ModelConfig& c = config;
  if (video.rank() != 5 || video.dim(4) != c.in_channels) {
    throw DimensionError("model " + c.name + ": expected video [N, T, H, W, " + std::to_string(c.in_channels) +
                         "], got " + shape_str(video.shape()));
  }
  TokenGrid g;
  if (c.resolved_embed_kernel() == c.patch_size && c.embed_padding == Extent3{0, 0, 0}) {
    g = patch_embed(video, c.patch_size, embed_weight, embed_bias);
  } else {
    g.tokens = conv3d(video, embed_weight, embed_bias, {c.patch_size, c.embed_padding, 1});
    g.patch = c.patch_size;
  }
  if (embed_norm) g.tokens = apply(*embed_norm, g.tokens);
  if (c.family == Family::ResNet) g.tokens = relu(g.tokens);
  if (c.stem_pool) g.tokens = max_pool3d(g.tokens, c.stem_pool->kernel, c.stem_pool->stride, c.stem_pool->padding);
  if (pos_embed.defined()) g.tokens = add(g.tokens, pos_embed);
  return g;
}

TokenGrid Model::Impl::run_block(const Block& blk, const TokenGrid& grid) const {
  Tensor x = grid.tokens;
  if (blk.dpe) x = add(x, apply_depthwise(*blk.dpe, x));
  const TokenGrid normed{apply(blk.norm1, x), grid.patch, {0, 0, 0}};
  Tensor shortcut = x;
  TokenGrid attended;
  switch (blk.kind) {
    case AttentionKind::LocalWindow:
    case AttentionKind::ShiftedLocalWindow:
      attended = shifted_window_attention(normed, effective_window(blk.window, normed.extents()),
                                          blk.table ? &*blk.table : nullptr, blk.attn);
      break;
    case AttentionKind::Global:
      attended = uses_uniformer_blocks(config) ? global_mhra(normed, blk.attn) : global_st_attention(normed, blk.attn);
      break;
    case AttentionKind::LocalMHRA:
      attended = local_mhra(normed, blk.kernel, blk.local);
      break;
    case AttentionKind::PooledAttention: {
      attended = pooled_attention(normed, blk.q_stride, blk.kv_stride, blk.pooled);
      if (blk.res_proj) shortcut = apply(*blk.res_proj, normed.tokens);
      shortcut = pool_skip({shortcut, grid.patch, {0, 0, 0}}, blk.q_stride).tokens;
      break;
    }
    default:
      throw ContractError("convolutional stage routed to attention block");
  }
  x = add(shortcut, attended.tokens);
  x = add(x, apply(blk.mlp, apply(blk.norm2, x)));
  return {x, grid.patch, {0, 0, 0}};
}

Tensor Model::Impl::run_conv_block(const ConvBlock& blk, const Tensor& x) const {
  const Extent3 stride{1, blk.stride, blk.stride};
  Tensor a = relu(apply(blk.norm_a, conv3d(x, blk.conv_a, {}, {{1, 1, 1}, {blk.kt / 2, 0, 0}, 1})));
  Tensor b = relu(apply(blk.norm_b, conv3d(a, blk.conv_b, {}, {stride, {0, 1, 1}, 1})));
  Tensor out = apply(blk.norm_c, conv3d(b, blk.conv_c, {}, {}));
  Tensor skip = blk.shortcut.defined() ? apply(blk.shortcut_norm, conv3d(x, blk.shortcut, {}, {stride, {0, 0, 0}, 1})) : x;
  return relu(add(out, skip));
}

TokenGrid Model::Impl::merge(const Stage& st, const TokenGrid& grid) const {
  if (config.merge_kind == MergeKind::PatchMerging) return patch_merging(grid, st.merge_norm, st.merge_reduction);
  const Extent3 e = grid.extents();
  if (e.h % 2 != 0 || e.w % 2 != 0) {
    throw GeometryError("merge: H' and W' must be even, grid is " + e.str());
  }
  Tensor x = conv3d(grid.tokens, st.merge_conv, st.merge_bias, {{1, 2, 2}, {0, 0, 0}, 1});
  return {apply(st.merge_norm, x), grid.patch, {0, 0, 0}};
}

Tensor Model::Impl::features(const Tensor& video, std::vector<TokenGrid>* outputs) const {
  PrecisionScope scope(dtype);
  const ModelConfig& c = config;
  if (c.family == Family::Linear) {
    if (video.rank() != 5 || video.dim(4) != c.in_channels) {
      throw DimensionError("model " + c.name + ": expected video [N, T, H, W, " + std::to_string(c.in_channels) +
                           "], got " + shape_str(video.shape()));
    }
    Tensor pooled = mean(reshape(video, {video.dim(0), -1, c.in_channels}), 1);
    if (outputs) outputs->push_back({reshape(pooled, {video.dim(0), 1, 1, 1, c.in_channels}), {1, 1, 1}, {0, 0, 0}});
    return pooled;
  }
  TokenGrid g = embed(video);
  const std::int64_t N = g.batch();
  if (c.factorized()) {
    Tensor x = factorized_encoder(g, factorized);
    if (outputs) {
      Tensor frames = factorized_frame_representations(g, factorized);
      outputs->push_back({reshape(frames, {N, frames.dim(1), 1, 1, frames.dim(2)}), g.patch, {0, 0, 0}});
    }
    return final_norm ? apply(*final_norm, x) : x;
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& st = stages[i];
    for (const auto& blk : st.blocks) g = run_block(blk, g);
    for (const auto& blk : st.conv_blocks) g.tokens = run_conv_block(blk, g.tokens);
    if (outputs) outputs->push_back(g);
    if (static_cast<int>(i) == c.temporal_pool_after) g.tokens = max_pool3d(g.tokens, {2, 1, 1}, {2, 1, 1}, {0, 0, 0});
    if (st.merge) g = merge(st, g);
  }
  Tensor x = reshape(g.tokens, {N, g.length(), g.channels()});
  if (final_norm) x = apply(*final_norm, x);
  return mean(x, 1);
}

Model::Model(ModelConfig config, std::uint64_t seed, Dtype dtype)
    : impl_(std::make_unique<Impl>(std::move(config), seed, dtype)) {}
Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

const ModelConfig& Model::config() const { return impl_->config; }
ParamSet& Model::params() { return impl_->params; }
const ParamSet& Model::params() const { return impl_->params; }
Dtype Model::dtype() const { return impl_->dtype; }

Tensor Model::features(const Tensor& video) const { return impl_->features(video, nullptr); }

Tensor Model::forward(const Tensor& video) const {
  PrecisionScope scope(impl_->dtype);
  return apply(impl_->head, impl_->features(video, nullptr));
}

std::vector<TokenGrid> Model::stage_outputs(const Tensor& video) const {
  std::vector<TokenGrid> out;
  impl_->features(video, &out);
  return out;
}

Model build_model(const ModelConfig& config, std::uint64_t seed, Dtype dtype) { return Model(config, seed, dtype); }

TokenGrid patch_embed(const Tensor& video, Extent3 patch, const Tensor& weight, const Tensor& bias) {
  if (video.rank() != 5) throw DimensionError("patch_embed: video must be [N, T, H, W, C], got " + shape_str(video.shape()));
  constexpr const char* axis[3] = {"T", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 1 || video.dim(a + 1) % patch[a] != 0) {
      throw GeometryError(std::string("patch_embed: ") + axis[a] + "=" + std::to_string(video.dim(a + 1)) +
                          " is not divisible by patch " + patch.str());
    }
  }
  if (weight.rank() != 5 || weight.dim(0) != patch.t || weight.dim(1) != patch.h || weight.dim(2) != patch.w) {
    throw DimensionError("patch_embed: weight " + shape_str(weight.shape()) + " does not match patch " + patch.str());
  }
  return {conv3d(video, weight, bias, {patch, {0, 0, 0}, 1}), patch, {0, 0, 0}};
}

TokenGrid patch_merging(const TokenGrid& grid, const NormParams& norm, const LinearParams& reduction) {
  validate_grid(grid);
  const Extent3 e = grid.extents();
  if (e.h % 2 != 0 || e.w % 2 != 0) {
    throw GeometryError("patch_merging: H' and W' must be even, grid is " + e.str());
  }
  const std::int64_t N = grid.batch(), C = grid.channels();
  Tensor x = reshape(grid.tokens, {N, e.t, e.h / 2, 2, e.w / 2, 2, C});
  // Channel order (dw, dh, c): neighbours (0,0), (1,0), (0,1), (1,1) in (h, w).
  x = permute(x, {0, 1, 2, 4, 5, 3, 6});
  x = reshape(x, {N, e.t, e.h / 2, e.w / 2, 4 * C});
  x = apply(reduction, apply(norm, x));
  return {x, {grid.patch.t, grid.patch.h * 2, grid.patch.w * 2}, {0, 0, 0}};
}

ModelConfig llgg_transform(const ModelConfig& config) {
  const std::size_t n = config.stages.size();
  if (n < 2) throw ConfigError("llgg_transform: " + config.name + " has fewer than 2 stages");
  bool changed = false;
  ModelConfig out = config;
  for (std::size_t i = n - 2; i < n; ++i) {
    StageSpec& s = out.stages[i];
    if (s.kind == AttentionKind::Global) continue;
    if (!is_windowed(s.kind)) {
      throw ConfigError("llgg_transform: stage " + std::to_string(i) + " of " + config.name + " uses " +
                        to_string(s.kind) + ", expected a windowed kind");
    }
    s.kind = AttentionKind::Global;
    s.window.reset();
    changed = true;
  }
  if (!changed) return config;
  bool any_shifted = false;
  for (const auto& s : out.stages) any_shifted |= s.kind == AttentionKind::ShiftedLocalWindow;
  out.use_shifted_window = any_shifted;
  out.name += "_llgg";
  validate(out);
  return out;
}

ModelConfig spatial_restriction(const ModelConfig& config) {
  ModelConfig out = config;
  out.name += "_2d";
  out.patch_size.t = 1;
  if (out.embed_kernel) out.embed_kernel->t = 1;
  out.embed_padding.t = 0;
  if (out.stem_pool) {
    out.stem_pool->kernel.t = 1;
    out.stem_pool->stride.t = 1;
    out.stem_pool->padding.t = 0;
  }
  out.temporal_pool_after = -1;
  out.dpe_kernel.t = 1;
  out.input_size.t = 1;
  for (auto& s : out.stages) {
    if (s.window) {
      s.window->window.t = 1;
      s.window->shift.t = 0;
    }
    if (s.pool_strides) {
      s.pool_strides->q_stride.t = 1;
      s.pool_strides->kv_stride.t = 1;
      s.pool_strides->kernel.t = 1;
    }
    s.kernel.t = 1;
    for (auto& k : s.temporal_kernels) k = 1;
    if (s.kind == AttentionKind::Conv3D) s.kind = AttentionKind::Conv2D;
  }
  validate(out);
  return out;
}

ModelConfig without_shifted_window(const ModelConfig& config) {
  ModelConfig out = config;
  for (auto& s : out.stages) {
    if (s.kind == AttentionKind::ShiftedLocalWindow) {
      s.kind = AttentionKind::LocalWindow;
      s.window->shift = {0, 0, 0};
    }
  }
  out.use_shifted_window = false;
  out.name += "_noshift";
  validate(out);
  return out;
}

ModelConfig without_relpos_bias(const ModelConfig& config) {
  ModelConfig out = config;
  out.use_relpos_bias = false;
  if (out.positional_embedding == PositionalEmbedding::Relative) out.positional_embedding = PositionalEmbedding::None;
  out.name += "_norelpos";
  validate(out);
  return out;
}

namespace {

bool same_tail(const Shape& a, const Shape& b) {
  return a.size() == b.size() && std::equal(a.begin() + 1, a.end(), b.begin() + 1);
}

Tensor repeat_leading(const Tensor& src, std::int64_t times, double factor, Dtype dtype) {
  const std::vector<double> v = src.values();
  std::vector<double> out;
  out.reserve(v.size() * static_cast<std::size_t>(times));
  for (std::int64_t r = 0; r < times; ++r) {
    for (double x : v) out.push_back(x * factor);
  }
  Shape shape = src.shape();
  shape[0] *= times;
  return Tensor::from_values(shape, out, dtype);
}

void check_inflation_structure(const ModelConfig& src, const ModelConfig& dst) {
  auto fail = [&](const std::string& what) {
    throw TransferError("inflation " + src.name + " -> " + dst.name + ": " + what);
  };
  if (src.family != dst.family) fail("family differs");
  if (src.stages.size() != dst.stages.size()) fail("stage count differs");
  if (src.patch_size.h != dst.patch_size.h || src.patch_size.w != dst.patch_size.w) fail("spatial patch differs");
  for (std::size_t i = 0; i < src.stages.size(); ++i) {
    const StageSpec& a = src.stages[i];
    const StageSpec& b = dst.stages[i];
    const std::string at = "stage " + std::to_string(i) + " ";
    if (a.depth != b.depth || a.dim != b.dim || a.heads != b.heads) fail(at + "depth/dim/heads differ");
    if (a.window.has_value() != b.window.has_value()) fail(at + "window presence differs");
    if (a.window && (a.window->window.h != b.window->window.h || a.window->window.w != b.window->window.w)) {
      fail(at + "spatial window differs");
    }
    if (a.kernel.h != b.kernel.h || a.kernel.w != b.kernel.w) fail(at + "spatial kernel differs");
  }
}

}  // namespace

InflationResult inflate_2d_to_3d(const ParamSet& image_params, const ModelConfig& image_config,
                                 const ModelConfig& target_config, const ParamSet& fresh) {
  check_inflation_structure(image_config, target_config);
  InflationResult result;
  for (const auto& [name, target] : fresh.entries()) {
    const Dtype dtype = target.dtype();
    std::string rule;
    Tensor value;
    if (!image_params.contains(name)) {
      rule = "fresh";
      value = target.clone();
    } else {
      const Tensor& src = image_params.at(name);
      const Shape& ss = src.shape();
      const Shape& ts = target.shape();
      const bool relpos_table = name.ends_with(".relpos_table");
      if (ss == ts) {
        rule = "copy";
        value = Tensor::from_values(ts, src.values(), dtype);
      } else if (ss.size() == 5 && ss[0] == 1 && same_tail(ss, ts)) {
        rule = "temporal_mean";
        value = repeat_leading(src, ts[0], 1.0 / static_cast<double>(ts[0]), dtype);
      } else if (relpos_table && ss.size() == 2 && ss[1] == ts[1] && ts[0] % ss[0] == 0) {
        rule = "temporal_replicate";
        value = repeat_leading(src, ts[0] / ss[0], 1.0, dtype);
      } else if (!ss.empty() && ss[0] == 1 && same_tail(ss, ts)) {
        rule = "temporal_replicate";
        value = repeat_leading(src, ts[0], 1.0, dtype);
      } else {
        throw TransferError("inflation: parameter " + name + " has source shape " + shape_str(ss) +
                            " incompatible with target " + shape_str(ts));
      }
    }
    result.params.add(name, value);
    result.map.push_back({name, rule});
  }
  for (const auto& [name, src] : image_params.entries()) {
    if (!fresh.contains(name)) throw TransferError("inflation: source parameter " + name + " has no target");
  }
  return result;
}

void load_params(ParamSet& target, const ParamSet& source) {
  for (auto& [name, t] : target.entries()) {
    if (!source.contains(name)) throw TransferError("load_params: missing parameter " + name);
    const Tensor& s = source.at(name);
    if (s.shape() != t.shape()) {
      throw TransferError("load_params: parameter " + name + " has shape " + shape_str(s.shape()) + ", expected " +
                          shape_str(t.shape()));
    }
    Tensor& dst = const_cast<Tensor&>(t);
    if (s.dtype() == dst.dtype()) {
      dst.buffer() = s.buffer();
    } else {
      const std::vector<double> v = s.values();
      for (std::size_t i = 0; i < v.size(); ++i) dst.buffer().set(i, v[i]);
    }
  }
  if (source.size() != target.size()) {
    for (const auto& [name, s] : source.entries()) {
      if (!target.contains(name)) throw TransferError("load_params: unexpected parameter " + name);
    }
  }
}

}  // namespace vtlab
