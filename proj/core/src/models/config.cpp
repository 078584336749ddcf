#include "vtlab/models/config.hpp"

#include <nlohmann/json.hpp>

#include "vtlab/errors.hpp"

namespace vtlab {

using nlohmann::json;

namespace {

const std::pair<AttentionKind, const char*> kKinds[] = {
    {AttentionKind::LocalWindow, "LocalWindow"}, {AttentionKind::ShiftedLocalWindow, "ShiftedLocalWindow"},
    {AttentionKind::Global, "Global"},           {AttentionKind::LocalMHRA, "LocalMHRA"},
    {AttentionKind::PooledAttention, "PooledAttention"}, {AttentionKind::Conv2D, "Conv2D"},
    {AttentionKind::Conv3D, "Conv3D"},
};
const std::pair<Family, const char*> kFamilies[] = {
    {Family::VideoSwin, "VideoSwin"}, {Family::Uniformer, "Uniformer"}, {Family::MViT, "MViT"},
    {Family::ViViT, "ViViT"},         {Family::ResNet, "ResNet"},       {Family::Linear, "Linear"},
};
const std::pair<PositionalEmbedding, const char*> kPositional[] = {
    {PositionalEmbedding::None, "none"}, {PositionalEmbedding::Absolute, "absolute"},
    {PositionalEmbedding::Relative, "relative"}};
const std::pair<MergeKind, const char*> kMerges[] = {{MergeKind::PatchMerging, "PatchMerging"}, {MergeKind::Conv, "Conv"}};
const std::pair<FrameRepr, const char*> kFrameReprs[] = {{FrameRepr::ClassToken, "class_token"},
                                                         {FrameRepr::MeanPool, "mean_pool"}};

template <class E, std::size_t N>
const char* name_of(const std::pair<E, const char*> (&table)[N], E value) {
  for (const auto& [v, n] : table)
    if (v == value) return n;
  return "?";
}

template <class E, std::size_t N>
E parse_enum(const std::pair<E, const char*> (&table)[N], const json& j, const char* field) {
  if (!j.is_string()) throw ConfigError(std::string("field '") + field + "' must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [v, n] : table)
    if (s == n) return v;
  throw ConfigError(std::string("field '") + field + "' has unknown value '" + s + "'");
}

json extent_json(Extent3 e) { return json::array({e.t, e.h, e.w}); }

Extent3 parse_extent(const json& j, const char* field) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string("field '") + field + "' must be [t, h, w]");
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

const json& require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ConfigError(std::string("missing field '") + field + "'");
  return *it;
}

template <class T>
T get_or(const json& j, const char* field, T fallback) {
  auto it = j.find(field);
  return it == j.end() ? fallback : it->get<T>();
}

json stage_json(const StageSpec& s) {
  json j{{"depth", s.depth},       {"dim", s.dim},
         {"heads", s.heads},       {"attention_kind", name_of(kKinds, s.kind)},
         {"merge_after", s.merge_after}};
  if (s.window) j["window"] = {{"window", extent_json(s.window->window)}, {"shift", extent_json(s.window->shift)}};
  if (s.pool_strides) {
    j["pool_strides"] = {{"q", extent_json(s.pool_strides->q_stride)},
                         {"kv", extent_json(s.pool_strides->kv_stride)},
                         {"kernel", extent_json(s.pool_strides->kernel)}};
  }
  if (s.kind == AttentionKind::LocalMHRA) j["kernel"] = extent_json(s.kernel);
  if (is_convolutional(s.kind)) {
    j["inner_dim"] = s.inner_dim;
    j["spatial_stride"] = s.spatial_stride;
    j["temporal_kernels"] = s.temporal_kernels;
  }
  return j;
}

StageSpec parse_stage(const json& j) {
  StageSpec s;
  s.depth = require(j, "depth").get<int>();
  s.dim = require(j, "dim").get<std::int64_t>();
  s.heads = get_or<std::int64_t>(j, "heads", 1);
  s.kind = parse_enum(kKinds, require(j, "attention_kind"), "attention_kind");
  s.merge_after = get_or(j, "merge_after", false);
  if (auto it = j.find("window"); it != j.end()) {
    s.window = WindowSpec{parse_extent(require(*it, "window"), "window.window"),
                          parse_extent(require(*it, "shift"), "window.shift")};
  }
  if (auto it = j.find("pool_strides"); it != j.end()) {
    PoolSpec p;
    p.q_stride = parse_extent(require(*it, "q"), "pool_strides.q");
    p.kv_stride = parse_extent(require(*it, "kv"), "pool_strides.kv");
    if (it->contains("kernel")) p.kernel = parse_extent((*it)["kernel"], "pool_strides.kernel");
    s.pool_strides = p;
  }
  if (j.contains("kernel")) s.kernel = parse_extent(j["kernel"], "kernel");
  s.inner_dim = get_or<std::int64_t>(j, "inner_dim", 0);
  s.spatial_stride = get_or<std::int64_t>(j, "spatial_stride", 1);
  s.temporal_kernels = get_or(j, "temporal_kernels", std::vector<std::int64_t>{});
  return s;
}

}  // namespace

std::string to_string(AttentionKind kind) { return name_of(kKinds, kind); }
std::string to_string(Family family) { return name_of(kFamilies, family); }

bool is_windowed(AttentionKind kind) {
  return kind == AttentionKind::LocalWindow || kind == AttentionKind::ShiftedLocalWindow;
}

bool is_convolutional(AttentionKind kind) { return kind == AttentionKind::Conv2D || kind == AttentionKind::Conv3D; }

void validate(const ModelConfig& c) {
  std::vector<std::string> issues;
  auto fail = [&](std::string msg) { issues.push_back(std::move(msg)); };
  if (c.name.empty()) fail("name is empty");
  if (c.num_classes < 1) fail("num_classes must be positive");
  if (c.in_channels < 1) fail("in_channels must be positive");
  for (int a = 0; a < 3; ++a) {
    if (c.patch_size[a] < 1) fail("patch_size extents must be positive");
    if (c.input_size[a] < 1) fail("input_size extents must be positive");
  }
  if (c.reported_views < 1) fail("reported_views must be positive");
  if (c.mlp_ratio < 1) fail("mlp_ratio must be positive");
  for (int a = 0; a < 3; ++a)
    if (c.dpe_kernel[a] < 1 || c.dpe_kernel[a] % 2 == 0) fail("dpe_kernel extents must be odd");
  if (c.family == Family::Linear && !c.stages.empty()) fail("Linear family takes no stages");
  if (c.family != Family::Linear && c.stages.empty()) fail("at least one stage is required");
  if ((c.positional_embedding == PositionalEmbedding::Relative) != c.use_relpos_bias) {
    fail("positional_embedding 'relative' must coincide with use_relpos_bias");
  }
  if (c.factorized() && (c.family != Family::ViViT || c.stages.size() != 1)) {
    fail("temporal_depth requires a single-stage ViViT config");
  }
  bool any_shifted = false;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageSpec& s = c.stages[i];
    const std::string at = "stage " + std::to_string(i) + ": ";
    if (s.depth < 1) fail(at + "depth must be >= 1");
    if (s.dim < 1) fail(at + "dim must be positive");
    if (s.heads < 1) fail(at + "heads must be positive");
    const bool attends = !is_convolutional(s.kind) && s.kind != AttentionKind::LocalMHRA;
    if (attends && s.heads > 0 && s.dim % s.heads != 0) fail(at + "dim not divisible by heads");
    if (is_windowed(s.kind) != s.window.has_value()) fail(at + "window must be present iff the kind is windowed");
    if (s.window) {
      try {
        validate_window(*s.window);
      } catch (const ConfigError& e) {
        fail(at + e.what());
      }
      const bool zero = !s.window->shifted();
      if (s.kind == AttentionKind::LocalWindow && !zero) fail(at + "LocalWindow stage carries a nonzero shift");
      if (s.kind == AttentionKind::ShiftedLocalWindow) {
        any_shifted = true;
        for (int a = 0; a < 3; ++a)
          if (s.window->shift[a] != s.window->window[a] / 2) fail(at + "shift must be floor(window/2) per axis");
      }
    }
    if ((s.kind == AttentionKind::PooledAttention) != s.pool_strides.has_value()) {
      fail(at + "pool_strides must be present iff the kind is PooledAttention");
    }
    if (s.kind == AttentionKind::LocalMHRA) {
      for (int a = 0; a < 3; ++a)
        if (s.kernel[a] < 1 || s.kernel[a] % 2 == 0) fail(at + "LocalMHRA kernel extents must be odd");
    }
    if (is_convolutional(s.kind)) {
      if (s.inner_dim < 1) fail(at + "conv stage needs inner_dim");
      if (static_cast<int>(s.temporal_kernels.size()) != s.depth) fail(at + "temporal_kernels must list one kernel per block");
      for (auto k : s.temporal_kernels) {
        if (k < 1 || k % 2 == 0) fail(at + "temporal kernels must be odd");
        if (s.kind == AttentionKind::Conv2D && k != 1) fail(at + "Conv2D stage has a temporal kernel > 1");
      }
    }
    if (s.merge_after && i + 1 == c.stages.size()) fail(at + "merge_after on the last stage");
    const bool family_ok = [&] {
      switch (c.family) {
        case Family::VideoSwin: return is_windowed(s.kind) || s.kind == AttentionKind::Global;
        case Family::Uniformer: return s.kind == AttentionKind::LocalMHRA || s.kind == AttentionKind::Global;
        case Family::MViT: return s.kind == AttentionKind::PooledAttention;
        case Family::ViViT: return s.kind == AttentionKind::Global;
        case Family::ResNet: return is_convolutional(s.kind);
        case Family::Linear: return false;
      }
      return false;
    }();
    if (!family_ok) fail(at + to_string(s.kind) + " is not a " + to_string(c.family) + " stage kind");
  }
  if (c.use_shifted_window != any_shifted) {
    bool windowed = false;
    for (const auto& s : c.stages) windowed |= is_windowed(s.kind);
    if (windowed) fail("use_shifted_window disagrees with the stage kinds");
  }
  if (!issues.empty()) {
    std::string msg = "invalid model config '" + c.name + "':";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ConfigError(msg);
  }
}

json to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(stage_json(s));
  json j{{"schema_version", ModelConfig::kSchemaVersion},
         {"name", c.name},
         {"family", name_of(kFamilies, c.family)},
         {"patch_size", extent_json(c.patch_size)},
         {"in_channels", c.in_channels},
         {"embed_padding", extent_json(c.embed_padding)},
         {"embed_bias", c.embed_bias},
         {"embed_dim", c.embed_dim},
         {"embed_norm", c.embed_norm},
         {"temporal_pool_after", c.temporal_pool_after},
         {"stages", stages},
         {"num_classes", c.num_classes},
         {"use_relpos_bias", c.use_relpos_bias},
         {"use_shifted_window", c.use_shifted_window},
         {"positional_embedding", name_of(kPositional, c.positional_embedding)},
         {"conv_position_embedding", c.conv_position_embedding},
         {"dpe_kernel", extent_json(c.dpe_kernel)},
         {"merge_kind", name_of(kMerges, c.merge_kind)},
         {"mlp_ratio", c.mlp_ratio},
         {"final_norm", c.final_norm},
         {"temporal_depth", c.temporal_depth},
         {"frame_repr", name_of(kFrameReprs, c.frame_repr)},
         {"input_size", extent_json(c.input_size)},
         {"reported_views", c.reported_views}};
  if (c.embed_kernel) j["embed_kernel"] = extent_json(*c.embed_kernel);
  if (c.stem_pool) {
    j["stem_pool"] = {{"kernel", extent_json(c.stem_pool->kernel)},
                      {"stride", extent_json(c.stem_pool->stride)},
                      {"padding", extent_json(c.stem_pool->padding)}};
  }
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    const int version = get_or(j, "schema_version", ModelConfig::kSchemaVersion);
    if (version != ModelConfig::kSchemaVersion) {
      throw ConfigError("unsupported model config schema_version " + std::to_string(version));
    }
    ModelConfig c;
    c.name = require(j, "name").get<std::string>();
    c.family = parse_enum(kFamilies, require(j, "family"), "family");
    c.patch_size = parse_extent(require(j, "patch_size"), "patch_size");
    c.in_channels = get_or<std::int64_t>(j, "in_channels", 3);
    if (j.contains("embed_kernel")) c.embed_kernel = parse_extent(j["embed_kernel"], "embed_kernel");
    if (j.contains("embed_padding")) c.embed_padding = parse_extent(j["embed_padding"], "embed_padding");
    c.embed_bias = get_or(j, "embed_bias", true);
    c.embed_dim = get_or<std::int64_t>(j, "embed_dim", 0);
    c.embed_norm = get_or(j, "embed_norm", false);
    if (auto it = j.find("stem_pool"); it != j.end()) {
      c.stem_pool = StemPool{parse_extent(require(*it, "kernel"), "stem_pool.kernel"),
                             parse_extent(require(*it, "stride"), "stem_pool.stride"),
                             parse_extent(require(*it, "padding"), "stem_pool.padding")};
    }
    c.temporal_pool_after = get_or(j, "temporal_pool_after", -1);
    for (const auto& s : require(j, "stages")) c.stages.push_back(parse_stage(s));
    c.num_classes = require(j, "num_classes").get<std::int64_t>();
    c.use_relpos_bias = get_or(j, "use_relpos_bias", false);
    c.use_shifted_window = get_or(j, "use_shifted_window", false);
    if (j.contains("positional_embedding")) {
      c.positional_embedding = parse_enum(kPositional, j["positional_embedding"], "positional_embedding");
    }
    c.conv_position_embedding = get_or(j, "conv_position_embedding", false);
    if (j.contains("dpe_kernel")) c.dpe_kernel = parse_extent(j["dpe_kernel"], "dpe_kernel");
    if (j.contains("merge_kind")) c.merge_kind = parse_enum(kMerges, j["merge_kind"], "merge_kind");
    c.mlp_ratio = get_or<std::int64_t>(j, "mlp_ratio", 4);
    c.final_norm = get_or(j, "final_norm", true);
    c.temporal_depth = get_or(j, "temporal_depth", 0);
    if (j.contains("frame_repr")) c.frame_repr = parse_enum(kFrameReprs, j["frame_repr"], "frame_repr");
    if (j.contains("input_size")) c.input_size = parse_extent(j["input_size"], "input_size");
    c.reported_views = get_or(j, "reported_views", 1);
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

std::string canonical_string(const ModelConfig& config) { return to_json(config).dump(); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const ModelConfig& config) { return fnv1a(canonical_string(config)); }

}  // namespace vtlab
