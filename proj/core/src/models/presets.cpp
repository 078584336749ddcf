#include "vtlab/models/presets.hpp"

#include <functional>
#include <map>

#include "vtlab/errors.hpp"
#include "vtlab/models/model.hpp"

namespace vtlab {

namespace {

StageSpec shifted_stage(int depth, std::int64_t dim, std::int64_t heads, Extent3 window, bool merge) {
  StageSpec s;
  s.depth = depth;
  s.dim = dim;
  s.heads = heads;
  s.kind = AttentionKind::ShiftedLocalWindow;
  s.window = WindowSpec{window, {window.t / 2, window.h / 2, window.w / 2}};
  s.merge_after = merge;
  return s;
}

StageSpec simple_stage(AttentionKind kind, int depth, std::int64_t dim, std::int64_t heads, bool merge) {
  StageSpec s;
  s.depth = depth;
  s.dim = dim;
  s.heads = heads;
  s.kind = kind;
  s.merge_after = merge;
  return s;
}

StageSpec pooled_stage(int depth, std::int64_t dim, std::int64_t heads, Extent3 q, Extent3 kv) {
  StageSpec s = simple_stage(AttentionKind::PooledAttention, depth, dim, heads, false);
  s.pool_strides = PoolSpec{q, kv, {3, 3, 3}};
  return s;
}

StageSpec conv_stage(AttentionKind kind, std::vector<std::int64_t> kernels, std::int64_t dim, std::int64_t inner,
                     std::int64_t stride) {
  StageSpec s = simple_stage(kind, static_cast<int>(kernels.size()), dim, 1, false);
  s.inner_dim = inner;
  s.spatial_stride = stride;
  s.temporal_kernels = std::move(kernels);
  return s;
}

ModelConfig swin(std::string name, std::int64_t c, std::vector<int> depths, std::vector<std::int64_t> heads,
                 Extent3 window) {
  ModelConfig m;
  m.name = std::move(name);
  m.family = Family::VideoSwin;
  m.patch_size = {2, 4, 4};
  m.embed_norm = true;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    m.stages.push_back(shifted_stage(depths[i], c << i, heads[i], window, i + 1 < depths.size()));
  }
  m.use_relpos_bias = true;
  m.use_shifted_window = true;
  m.positional_embedding = PositionalEmbedding::Relative;
  return m;
}

ModelConfig uniformer(std::string name, std::vector<std::int64_t> dims, std::vector<int> depths,
                      std::int64_t head_dim, Extent3 kernel) {
  ModelConfig m;
  m.name = std::move(name);
  m.family = Family::Uniformer;
  m.patch_size = {2, 4, 4};
  m.embed_kernel = Extent3{3, 4, 4};
  m.embed_padding = {1, 0, 0};
  m.embed_norm = true;
  m.merge_kind = MergeKind::Conv;
  m.conv_position_embedding = true;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const AttentionKind kind = i < 2 ? AttentionKind::LocalMHRA : AttentionKind::Global;
    StageSpec s = simple_stage(kind, depths[i], dims[i], std::max<std::int64_t>(1, dims[i] / head_dim), i + 1 < dims.size());
    if (kind == AttentionKind::LocalMHRA) s.kernel = kernel;
    m.stages.push_back(s);
  }
  return m;
}

ModelConfig mvit(std::string name, std::int64_t c, std::vector<int> depths, std::vector<Extent3> kv) {
  ModelConfig m;
  m.name = std::move(name);
  m.family = Family::MViT;
  m.patch_size = {2, 4, 4};
  m.embed_kernel = Extent3{3, 7, 7};
  m.embed_padding = {1, 3, 3};
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const Extent3 q = i == 0 ? Extent3{1, 1, 1} : Extent3{1, 2, 2};
    m.stages.push_back(pooled_stage(depths[i], c << i, std::int64_t{1} << i, q, kv[i]));
  }
  m.use_relpos_bias = true;
  m.positional_embedding = PositionalEmbedding::Relative;
  return m;
}

ModelConfig vivit(std::string name, Extent3 tubelet, std::int64_t dim, int depth, std::int64_t heads,
                  int temporal_depth) {
  ModelConfig m;
  m.name = std::move(name);
  m.family = Family::ViViT;
  m.patch_size = tubelet;
  m.stages.push_back(simple_stage(AttentionKind::Global, depth, dim, heads, false));
  m.positional_embedding = PositionalEmbedding::Absolute;
  m.temporal_depth = temporal_depth;
  return m;
}

ModelConfig resnet(std::string name, bool inflated, std::int64_t stem_dim, Extent3 stem_kernel,
                   std::vector<StageSpec> stages) {
  ModelConfig m;
  m.name = std::move(name);
  m.family = Family::ResNet;
  m.patch_size = {1, 2, 2};
  m.embed_kernel = stem_kernel;
  m.embed_padding = {stem_kernel.t / 2, stem_kernel.h / 2, stem_kernel.w / 2};
  m.embed_bias = false;
  m.embed_dim = stem_dim;
  m.embed_norm = true;
  m.stem_pool = StemPool{};
  m.temporal_pool_after = 0;
  m.final_norm = false;
  m.stages = std::move(stages);
  (void)inflated;
  return m;
}

ModelConfig full(ModelConfig m, Extent3 input, std::int64_t classes, int views = 1) {
  m.input_size = input;
  m.num_classes = classes;
  m.reported_views = views;
  return m;
}

ModelConfig r50(std::string name, bool inflated) {
  const AttentionKind k = inflated ? AttentionKind::Conv3D : AttentionKind::Conv2D;
  auto t = [&](std::vector<std::int64_t> ks) {
    if (!inflated) ks.assign(ks.size(), 1);
    return ks;
  };
  std::vector<StageSpec> stages{conv_stage(k, t({3, 3, 3}), 256, 64, 1), conv_stage(k, t({3, 1, 3, 1}), 512, 128, 2),
                                conv_stage(k, t({3, 1, 3, 1, 3, 1}), 1024, 256, 2),
                                conv_stage(k, t({1, 3, 1}), 2048, 512, 2)};
  return resnet(std::move(name), inflated, 64, inflated ? Extent3{5, 7, 7} : Extent3{1, 7, 7}, std::move(stages));
}

ModelConfig toy_resnet(std::string name, bool inflated) {
  const AttentionKind k = inflated ? AttentionKind::Conv3D : AttentionKind::Conv2D;
  const std::int64_t kt = inflated ? 3 : 1;
  std::vector<StageSpec> stages{conv_stage(k, {kt}, 64, 16, 1), conv_stage(k, {kt}, 128, 32, 2),
                                conv_stage(k, {1}, 256, 64, 2)};
  return resnet(std::move(name), inflated, 16, {kt, 5, 5}, std::move(stages));
}

const std::map<std::string, std::function<ModelConfig()>>& catalog() {
  static const std::map<std::string, std::function<ModelConfig()>> table = {
      {"vst_small", [] { return full(swin("vst_small", 96, {2, 2, 18, 2}, {3, 6, 12, 24}, {8, 7, 7}), {32, 224, 224}, 400); }},
      {"vst_base", [] { return full(swin("vst_base", 128, {2, 2, 18, 2}, {4, 8, 16, 32}, {8, 7, 7}), {32, 224, 224}, 174); }},
      {"uniformer_small",
       [] { return full(uniformer("uniformer_small", {64, 128, 320, 512}, {3, 4, 8, 3}, 64, {5, 5, 5}), {16, 224, 224}, 400, 4); }},
      {"mvitv2_small",
       [] {
         return full(mvit("mvitv2_small", 96, {1, 2, 11, 2}, {{1, 8, 8}, {1, 4, 4}, {1, 2, 2}, {1, 1, 1}}), {16, 224, 224}, 400);
       }},
      {"vivit_st", [] { return full(vivit("vivit_st", {2, 16, 16}, 768, 12, 12, 0), {32, 224, 224}, 400); }},
      {"vivit_fe", [] { return full(vivit("vivit_fe", {2, 16, 16}, 768, 12, 12, 4), {32, 224, 224}, 400); }},
      {"i3d_r50", [] { return full(r50("i3d_r50", true), {8, 224, 224}, 400); }},
      {"c2d_r50", [] { return full(r50("c2d_r50", false), {8, 224, 224}, 400); }},
      {"toy_vst", [] { return swin("toy_vst", 24, {2, 2, 2, 2}, {1, 2, 4, 8}, {2, 4, 4}); }},
      {"toy_vst_llgg",
       [] {
         ModelConfig m = llgg_transform(swin("toy_vst", 24, {2, 2, 2, 2}, {1, 2, 4, 8}, {2, 4, 4}));
         m.name = "toy_vst_llgg";
         return m;
       }},
      {"toy_uniformer", [] { return uniformer("toy_uniformer", {24, 48, 96, 192}, {1, 2, 2, 1}, 24, {5, 5, 5}); }},
      {"toy_mvit", [] { return mvit("toy_mvit", 24, {1, 2, 2}, {{1, 4, 4}, {1, 2, 2}, {1, 1, 1}}); }},
      {"toy_vivit_st", [] { return vivit("toy_vivit_st", {2, 8, 8}, 64, 4, 4, 0); }},
      {"toy_vivit_fe", [] { return vivit("toy_vivit_fe", {2, 8, 8}, 64, 3, 4, 1); }},
      {"toy_i3d", [] { return toy_resnet("toy_i3d", true); }},
      {"toy_c2d", [] { return toy_resnet("toy_c2d", false); }},
      {"toy_linear",
       [] {
         ModelConfig m;
         m.name = "toy_linear";
         m.family = Family::Linear;
         m.patch_size = {1, 1, 1};
         m.final_norm = false;
         return m;
       }},
  };
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, make] : catalog()) out.push_back(name);
  return out;
}

std::vector<std::string> full_scale_preset_names() {
  return {"vst_small", "vst_base", "uniformer_small", "mvitv2_small", "vivit_st", "vivit_fe", "i3d_r50", "c2d_r50"};
}

std::vector<std::string> toy_preset_names() {
  std::vector<std::string> out;
  for (const auto& name : preset_names()) {
    if (name.starts_with("toy_")) out.push_back(name);
  }
  return out;
}

ModelConfig preset(const std::string& name) {
  const auto& table = catalog();
  auto it = table.find(name);
  if (it == table.end()) {
    std::string known;
    for (const auto& [n, make] : table) known += (known.empty() ? "" : ", ") + n;
    throw LookupError("unknown preset '" + name + "' (known: " + known + ")");
  }
  ModelConfig m = it->second();
  validate(m);
  return m;
}

std::optional<ReferenceFigures> reference_figures(const std::string& name) {
  static const std::map<std::string, ReferenceFigures> table = {
      {"vst_small", {49.8, 166.0}},      {"uniformer_small", {21.4, 167.2}}, {"mvitv2_small", {34.5, 64.5}},
      {"vivit_fe", {115.1, 284.0}},      {"vivit_st", {88.9, 455.2}},        {"i3d_r50", {28.1, 28.5}},
      {"c2d_r50", {24.3, 19.6}},
  };
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

}  // namespace vtlab
