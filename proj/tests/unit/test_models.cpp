#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/models/accounting.hpp"
#include "vtlab/models/model.hpp"
#include "vtlab/models/presets.hpp"

using namespace vtlab;
using namespace vtlab::testing;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 5;

Tensor random_video(const Shape& shape, std::uint64_t seed, Dtype dtype = Dtype::F64) {
  Rng rng(seed, 5);
  return rand_uniform(shape, rng, 0.0, 1.0, dtype);
}

// Repeats one frame [N, 1, H, W, C] T times.
Tensor static_clip(const Tensor& frame, std::int64_t T) {
  std::vector<Tensor> frames(static_cast<std::size_t>(T), frame);
  return concat(frames, 1);
}

double max_spread_along_t(const Tensor& grid) {
  const std::int64_t N = grid.dim(0), T = grid.dim(1), R = grid.numel() / (N * T);
  double spread = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t t = 1; t < T; ++t)
      for (std::int64_t r = 0; r < R; ++r)
        spread = std::max(spread, std::abs(grid.value((n * T + t) * R + r) - grid.value(n * T * R + r)));
  return spread;
}

std::int64_t relpos_elements(const ParamSet& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params.entries())
    if (name.ends_with("relpos_table")) n += t.numel();
  return n;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(ModelConfig, JsonRoundTripForEveryPreset) {
  for (const auto& name : preset_names()) {
    const ModelConfig c = preset(name);
    const ModelConfig back = model_config_from_json(nlohmann::json::parse(to_json(c).dump()));
    EXPECT_EQ(back, c) << name;
    EXPECT_EQ(config_hash(back), config_hash(c)) << name;
  }
}

TEST(ModelConfig, HashChangesWithAnyField) {
  const ModelConfig a = preset("toy_vst");
  ModelConfig b = a;
  b.stages[1].heads = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(preset("toy_vst")));
}

TEST(ModelConfig, ValidationListsEveryViolation) {
  ModelConfig c = preset("toy_vst");
  c.stages[0].window.reset();
  c.stages[3].merge_after = true;
  c.stages[1].dim = 47;
  try {
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("stage 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("stage 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("stage 1"), std::string::npos) << msg;
  }
  EXPECT_THROW(build_model(c, 0), ConfigError);
}

TEST(ModelConfig, InconsistentFlagsRejected) {
  ModelConfig c = preset("toy_vst");
  c.use_shifted_window = false;
  EXPECT_THROW(validate(c), ConfigError);
  c = preset("toy_vst");
  c.use_relpos_bias = false;
  EXPECT_THROW(validate(c), ConfigError);
  c = preset("toy_vst");
  c.stages[0].window->shift = {1, 1, 1};
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(ModelConfig, MalformedJsonIsConfigError) {
  nlohmann::json j = to_json(preset("toy_vst"));
  j["stages"][0]["depth"] = "two";
  EXPECT_THROW(model_config_from_json(j), ConfigError);
  j = to_json(preset("toy_vst"));
  j["family"] = "Transformer";
  EXPECT_THROW(model_config_from_json(j), ConfigError);
  j = to_json(preset("toy_vst"));
  j["schema_version"] = 99;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
}

// ---------------------------------------------------------------- presets

TEST(Presets, CatalogContents) {
  const auto names = preset_names();
  for (const char* n : {"vst_small", "vst_base", "uniformer_small", "mvitv2_small", "vivit_st", "vivit_fe", "i3d_r50",
                        "c2d_r50"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  }
  EXPECT_THROW(preset("resnet_9000"), LookupError);
}

TEST(Presets, ToyUniformerIsLocalLocalGlobalGlobal) {
  const ModelConfig c = preset("toy_uniformer");
  ASSERT_EQ(c.stages.size(), 4u);
  EXPECT_EQ(c.stages[0].kind, AttentionKind::LocalMHRA);
  EXPECT_EQ(c.stages[1].kind, AttentionKind::LocalMHRA);
  EXPECT_EQ(c.stages[2].kind, AttentionKind::Global);
  EXPECT_EQ(c.stages[3].kind, AttentionKind::Global);
}

TEST(Presets, ToyPresetsAreSmallAndRun) {
  const Tensor clip = random_video({1, 8, 32, 32, 3}, 1, Dtype::F32);
  std::set<Family> families;
  for (const auto& name : toy_preset_names()) {
    const ModelConfig c = preset(name);
    families.insert(c.family);
    EXPECT_LE(count_params(c).total, 2'000'000) << name;
    Model m = build_model(c, 1, Dtype::F32);
    NoGradGuard no_grad;
    const Tensor logits = m.forward(clip);
    EXPECT_EQ(logits.shape(), (Shape{1, c.num_classes})) << name;
  }
  EXPECT_EQ(families.size(), 6u);
}

// ---------------------------------------------------------------- patch embedding and merging

TEST(PatchEmbed, ToyGeometry) {
  const Tensor video = random_video({1, 8, 32, 32, 3}, 2);
  const TokenGrid g = patch_embed(video, {2, 4, 4}, random_tensor({2, 4, 4, 3, 32}, 1), random_tensor({32}, 2));
  EXPECT_EQ(g.tokens.shape(), (Shape{1, 4, 8, 8, 32}));
  const TokenGrid p = patch_embed(video, {1, 1, 1}, random_tensor({1, 1, 1, 3, 5}, 1), {});
  EXPECT_EQ(p.extents(), (Extent3{8, 32, 32}));
}

TEST(PatchEmbed, MatchesExtractThenMatmul) {
  const Extent3 patch{2, 2, 3};
  const Tensor video = random_video({2, 4, 6, 9, 3}, 3);
  const Tensor w = random_tensor({2, 2, 3, 3, 7}, 4);
  const Tensor b = random_tensor({7}, 5);
  const TokenGrid g = patch_embed(video, patch, w, b);
  // Flatten each patch in (dt, dh, dw, c) order and multiply by the reshaped weight.
  const std::int64_t K = patch.volume() * 3;
  const Tensor wm = reshape(w, {K, 7});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t t = 0; t < 2; ++t)
      for (std::int64_t h = 0; h < 3; ++h)
        for (std::int64_t x = 0; x < 3; ++x) {
          std::vector<double> row;
          for (std::int64_t dt = 0; dt < 2; ++dt)
            for (std::int64_t dh = 0; dh < 2; ++dh)
              for (std::int64_t dw = 0; dw < 3; ++dw)
                for (std::int64_t c = 0; c < 3; ++c)
                  row.push_back(video.value((((n * 4 + t * 2 + dt) * 6 + h * 2 + dh) * 9 + x * 3 + dw) * 3 + c));
          for (std::int64_t o = 0; o < 7; ++o) {
            double acc = b.value(o);
            for (std::int64_t k = 0; k < K; ++k) acc += row[k] * wm.value(k * 7 + o);
            EXPECT_NEAR(g.tokens.value((((n * 2 + t) * 3 + h) * 3 + x) * 7 + o), acc, 1e-6);
          }
        }
}

TEST(PatchEmbed, NonDivisibleIsGeometryError) {
  const Tensor video = random_video({1, 7, 32, 32, 3}, 2);
  EXPECT_THROW(patch_embed(video, {2, 4, 4}, random_tensor({2, 4, 4, 3, 8}, 1), {}), GeometryError);
}

TEST(PatchMerging, HalvesSpatialExtentsAndDoublesWidth) {
  const std::int64_t C = 32;
  TokenGrid g{random_tensor({1, 4, 8, 8, C}, 1), {2, 4, 4}, {0, 0, 0}};
  const TokenGrid m = patch_merging(g, random_norm(4 * C, 1, 1), random_linear(4 * C, 2 * C, 1, 2));
  EXPECT_EQ(m.tokens.shape(), (Shape{1, 4, 4, 4, 64}));
  EXPECT_EQ(m.length() * 4, g.length());
}

TEST(PatchMerging, ThreeMergesReachEighthResolution) {
  std::int64_t C = 4;
  TokenGrid g{random_tensor({1, 2, 16, 24, C}, 1), {1, 1, 1}, {0, 0, 0}};
  for (int i = 0; i < 3; ++i, C *= 2) g = patch_merging(g, random_norm(4 * C, 1, i), random_linear(4 * C, 2 * C, 1, 10 + i));
  EXPECT_EQ(g.tokens.shape(), (Shape{1, 2, 2, 3, 32}));
}

TEST(PatchMerging, MatchesNeighbourhoodConcatOracle) {
  const std::int64_t C = 3;
  const Tensor x = random_tensor({1, 2, 4, 4, C}, 7);
  const NormParams norm = random_norm(4 * C, 3, 3);
  const LinearParams lin = random_linear(4 * C, 5, 3, 4);
  const TokenGrid m = patch_merging({x, {1, 1, 1}, {0, 0, 0}}, norm, lin);
  // Neighbour order: (h, w) = (0,0), (1,0), (0,1), (1,1).
  const int dh[4] = {0, 1, 0, 1};
  const int dw[4] = {0, 0, 1, 1};
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t h = 0; h < 2; ++h)
      for (std::int64_t w = 0; w < 2; ++w) {
        std::vector<double> v;
        for (int k = 0; k < 4; ++k)
          for (std::int64_t c = 0; c < C; ++c) v.push_back(x.value(((t * 4 + 2 * h + dh[k]) * 4 + 2 * w + dw[k]) * C + c));
        double mu = 0, var = 0;
        for (double a : v) mu += a;
        mu /= 12;
        for (double a : v) var += (a - mu) * (a - mu);
        var /= 12;
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = (v[j] - mu) / std::sqrt(var + 1e-5) * norm.gamma.value(j) + norm.beta.value(j);
        }
        for (std::int64_t o = 0; o < 5; ++o) {
          double acc = lin.bias.value(o);
          for (std::int64_t j = 0; j < 12; ++j) acc += v[j] * lin.weight.value(j * 5 + o);
          EXPECT_NEAR(m.tokens.value(((t * 2 + h) * 2 + w) * 5 + o), acc, 1e-9);
        }
      }
}

TEST(PatchMerging, OddExtentIsGeometryError) {
  TokenGrid g{random_tensor({1, 2, 5, 4, 2}, 1), {1, 1, 1}, {0, 0, 0}};
  EXPECT_THROW(patch_merging(g, random_norm(8, 1, 1), random_linear(8, 4, 1, 2)), GeometryError);
}

// ---------------------------------------------------------------- build_model

TEST(BuildModel, ToyVstForwardShapeAndFinite) {
  const Model m = build_model(preset("toy_vst"), 3);
  const Tensor logits = m.forward(random_video({2, 8, 32, 32, 3}, 4));
  ASSERT_EQ(logits.shape(), (Shape{2, 10}));
  for (double v : logits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(BuildModel, SameSeedBitIdenticalParameters) {
  const Model a = build_model(preset("toy_vst"), 11);
  const Model b = build_model(preset("toy_vst"), 11);
  const Model c = build_model(preset("toy_vst"), 12);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params().entries()[i].first, b.params().entries()[i].first);
    EXPECT_TRUE(a.params().entries()[i].second.buffer() == b.params().entries()[i].second.buffer());
    any_diff |= !(a.params().entries()[i].second.buffer() == c.params().entries()[i].second.buffer());
  }
  EXPECT_TRUE(any_diff);
}

TEST(BuildModel, NoShiftDiffersOnlyInShiftFields) {
  const ModelConfig base = preset("toy_vst");
  const ModelConfig ns = without_shifted_window(base);
  EXPECT_EQ(count_params(base).total, count_params(ns).total);
  EXPECT_EQ(build_model(ns, 0).params().total_elements(), build_model(base, 0).params().total_elements());
  ModelConfig restored = ns;
  restored.name = base.name;
  restored.use_shifted_window = true;
  for (std::size_t i = 0; i < restored.stages.size(); ++i) {
    EXPECT_EQ(ns.stages[i].window->window, base.stages[i].window->window);
    EXPECT_EQ(ns.stages[i].window->shift, (Extent3{0, 0, 0}));
    restored.stages[i].kind = base.stages[i].kind;
    restored.stages[i].window = base.stages[i].window;
  }
  EXPECT_EQ(restored, base);
}

TEST(BuildModel, StageOutputsFollowMerges) {
  const Model m = build_model(preset("toy_vst"), 1);
  const auto outs = m.stage_outputs(random_video({1, 8, 32, 32, 3}, 2));
  ASSERT_EQ(outs.size(), 4u);
  EXPECT_EQ(outs[0].tokens.shape(), (Shape{1, 4, 8, 8, 24}));
  EXPECT_EQ(outs[1].tokens.shape(), (Shape{1, 4, 4, 4, 48}));
  EXPECT_EQ(outs[2].tokens.shape(), (Shape{1, 4, 2, 2, 96}));
  EXPECT_EQ(outs[3].tokens.shape(), (Shape{1, 4, 1, 1, 192}));
}

TEST(BuildModel, ToyVstBlockGradient) {
  // One toy-VST block (pre-norm shifted-window attention with relative bias,
  // then MLP) at toy width, on a grid that both shifts and pads.
  const std::int64_t D = 24;
  const WindowSpec spec{{2, 4, 4}, {1, 2, 2}};
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::vector<Tensor> in{random_tensor({1, 2, 4, 6, D}, seed, 1)};
    const NormParams n1 = random_norm(D, seed, 2), n2 = random_norm(D, seed, 4);
    const AttentionParams attn = random_attention(D, 2, seed);
    const LinearParams fc1 = random_linear(D, 4 * D, seed, 6), fc2 = random_linear(4 * D, D, seed, 8);
    const Tensor table = random_tensor({RelPosBiasTable::entries(spec.window), 2}, seed, 9);
    for (Tensor t : {n1.gamma, n1.beta, attn.qkv.weight, attn.qkv.bias, attn.proj.weight, attn.proj.bias, table,
                     n2.gamma, n2.beta, fc1.weight, fc1.bias, fc2.weight, fc2.bias}) {
      in.push_back(t);
    }
    auto block = [&](const std::vector<Tensor>& p) {
      const NormParams a{p[1], p[2]}, b{p[8], p[9]};
      const AttentionParams at{2, {p[3], p[4]}, {p[5], p[6]}};
      const RelPosBiasTable tb{spec.window, 2, p[7]};
      const MlpParams mlp{{p[10], p[11]}, {p[12], p[13]}};
      const TokenGrid normed{apply(a, p[0]), {2, 4, 4}, {0, 0, 0}};
      const WindowSpec eff = effective_window(spec, normed.extents());
      Tensor x = add(p[0], shifted_window_attention(normed, eff, &tb, at).tokens);
      return add(x, apply(mlp, apply(b, x)));
    };
    EXPECT_LT(gradcheck(block, in, seed), kGradTol) << "seed " << seed;
  }
}

TEST(BuildModel, EveryToyPresetFiniteOverHundredBatches) {
  NoGradGuard no_grad;
  for (const auto& name : toy_preset_names()) {
    const Model m = build_model(preset(name), 5, Dtype::F32);
    for (int b = 0; b < 100; ++b) {
      Rng rng(1000 + b, 3);
      const Tensor video = randn({2, 8, 32, 32, 3}, rng, 1.0, Dtype::F32);
      const std::vector<int> labels{b % 10, (b + 3) % 10};
      const Tensor loss = cross_entropy(m.forward(video), labels);
      ASSERT_TRUE(std::isfinite(loss.item())) << name << " batch " << b;
    }
  }
}

TEST(BuildModel, WrongInputIsDimensionError) {
  const Model m = build_model(preset("toy_vst"), 1);
  EXPECT_THROW(m.forward(random_video({1, 8, 32, 32, 1}, 1)), DimensionError);
}

// ---------------------------------------------------------------- llgg

TEST(Llgg, VstSmallBecomesLocalLocalGlobalGlobal) {
  const ModelConfig c = llgg_transform(preset("vst_small"));
  ASSERT_EQ(c.stages.size(), 4u);
  EXPECT_EQ(c.stages[0].kind, AttentionKind::ShiftedLocalWindow);
  EXPECT_EQ(c.stages[1].kind, AttentionKind::ShiftedLocalWindow);
  EXPECT_EQ(c.stages[2].kind, AttentionKind::Global);
  EXPECT_EQ(c.stages[3].kind, AttentionKind::Global);
}

TEST(Llgg, Idempotent) {
  const ModelConfig once = llgg_transform(preset("toy_vst"));
  EXPECT_EQ(llgg_transform(once), once);
}

TEST(Llgg, OnlyLastTwoStagesChange) {
  const ModelConfig base = preset("vst_small");
  const ModelConfig l = llgg_transform(base);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(l.stages[i], base.stages[i]);
  for (std::size_t i = 2; i < 4; ++i) {
    StageSpec a = l.stages[i], b = base.stages[i];
    a.kind = b.kind;
    a.window = b.window;
    EXPECT_EQ(a, b);
  }
  ModelConfig rest = l;
  rest.name = base.name;
  rest.stages = base.stages;
  EXPECT_EQ(rest, base);
}

TEST(Llgg, ParameterDiffIsRemovedBiasTables) {
  const ModelConfig base = preset("toy_vst");
  const ModelConfig l = llgg_transform(base);
  const Model mb = build_model(base, 0), ml = build_model(l, 0);
  std::int64_t removed = 0;
  for (const auto& [name, t] : mb.params().entries()) {
    if (!ml.params().contains(name)) {
      EXPECT_TRUE(name.ends_with("relpos_table")) << name;
      EXPECT_TRUE(name.starts_with("stages.2") || name.starts_with("stages.3")) << name;
      removed += t.numel();
    }
  }
  EXPECT_EQ(count_params(base).total - count_params(l).total, removed);
  EXPECT_EQ(relpos_elements(mb.params()) - relpos_elements(ml.params()), removed);
}

TEST(Llgg, RejectsUnsuitableConfigs) {
  ModelConfig one = preset("toy_vivit_st");
  EXPECT_THROW(llgg_transform(one), ConfigError);
  EXPECT_THROW(llgg_transform(preset("toy_mvit")), ConfigError);
}

// ---------------------------------------------------------------- accounting

TEST(Accounting, AnalyticCountEqualsInstantiatedForEveryPreset) {
  for (const auto& name : preset_names()) {
    const ModelConfig c = preset(name);
    const ParamReport r = count_params(c);
    std::int64_t parts = 0;
    for (const auto& p : r.parts) parts += p.params;
    EXPECT_EQ(parts, r.total) << name;
    EXPECT_EQ(build_model(c, 0, Dtype::F32).params().total_elements(), r.total) << name;
  }
}

TEST(Accounting, SingleLinearModelHandCount) {
  ModelConfig c = preset("toy_linear");
  c.in_channels = 7;
  c.num_classes = 5;
  EXPECT_EQ(count_params(c).total, 7 * 5 + 5);
  const std::int64_t m = 6;
  EXPECT_EQ(count_flops(c, Extent3{1, 1, 1}, m).flops(), 2 * m * 7 * 5);
}

TEST(Accounting, FlopPartsSumToTotal) {
  for (const auto& name : preset_names()) {
    const FlopReport r = count_flops(preset(name));
    std::int64_t macs = 0, el = 0;
    for (const auto& p : r.parts) {
      macs += p.macs;
      el += p.attention_elements;
    }
    EXPECT_EQ(macs, r.macs) << name;
    EXPECT_EQ(el, r.attention_elements) << name;
    EXPECT_EQ(r.flops(), 2 * r.macs);
  }
}

TEST(Accounting, WindowedAttentionCheaperThanGlobal) {
  const ModelConfig local = preset("toy_vst");
  ModelConfig global = local;
  global.stages[0].kind = AttentionKind::Global;
  global.stages[0].window.reset();
  const FlopReport a = count_flops(local), b = count_flops(global);
  // Stage 0 grid 4x8x8 = 256 tokens, window 2x4x4 = 32 tokens, 8 windows.
  EXPECT_EQ(a.parts[1].attention_elements, 2 * 8 * 32 * 32);
  EXPECT_EQ(b.parts[1].attention_elements, 2 * 256 * 256);
  EXPECT_LT(a.parts[1].macs, b.parts[1].macs);
}

TEST(Accounting, ReportsSerialize) {
  const ParamReport p = count_params(preset("toy_vst"));
  const FlopReport f = count_flops(preset("toy_vst"));
  EXPECT_EQ(to_json(p)["total"].get<std::int64_t>(), p.total);
  EXPECT_EQ(to_json(f)["flops"].get<std::int64_t>(), 2 * f.macs);
  EXPECT_NE(format_table(p).find("stage3"), std::string::npos);
  EXPECT_NE(format_table(f).find("total"), std::string::npos);
}

// ---------------------------------------------------------------- inflation

TEST(Inflation, UnitTemporalKernelIsExactCopy) {
  const ModelConfig target = preset("toy_c2d");
  const ModelConfig image = spatial_restriction(target);
  const Model src = build_model(image, 1);
  const Model fresh = build_model(target, 2);
  const InflationResult r = inflate_2d_to_3d(src.params(), image, target, fresh.params());
  for (const auto& e : r.map) EXPECT_EQ(e.rule, "copy") << e.name;
  for (const auto& [name, t] : r.params.entries()) EXPECT_EQ(max_abs_diff(t, src.params().at(name)), 0.0) << name;
}

TEST(Inflation, RulesForInflatedResnet) {
  const ModelConfig target = preset("toy_i3d");
  const ModelConfig image = spatial_restriction(target);
  const Model src = build_model(image, 1);
  const InflationResult r = inflate_2d_to_3d(src.params(), image, target, build_model(target, 2).params());
  std::map<std::string, std::string> rule;
  for (const auto& e : r.map) rule[e.name] = e.rule;
  EXPECT_EQ(rule["embed.weight"], "temporal_mean");
  EXPECT_EQ(rule["stages.0.blocks.0.conv_a.weight"], "temporal_mean");
  EXPECT_EQ(rule["stages.2.blocks.0.conv_a.weight"], "copy");
  EXPECT_EQ(rule["head.weight"], "copy");
}

TEST(Inflation, InflatedConvMatchesPerFrameResponse) {
  const ModelConfig target = preset("toy_i3d");
  const ModelConfig image = spatial_restriction(target);
  const Model src = build_model(image, 1);
  const InflationResult r = inflate_2d_to_3d(src.params(), image, target, build_model(target, 2).params());
  const Tensor w2 = src.params().at("stages.0.blocks.0.conv_a.weight");
  const Tensor w3 = r.params.at("stages.0.blocks.0.conv_a.weight");
  ASSERT_EQ(w3.dim(0), 3);
  const Tensor frame = random_tensor({1, 1, 5, 5, 16}, 3);
  const Tensor y2 = conv3d(frame, w2, {});
  const Tensor y3 = conv3d(static_clip(frame, 6), w3, {});  // valid in time: 4 output frames
  ASSERT_EQ(y3.dim(1), 4);
  EXPECT_LT(max_abs_diff(slice(y3, 1, 0, 1), y2), 1e-5);
  EXPECT_LT(max_spread_along_t(y3), 1e-5);
}

TEST(Inflation, StaticClipReproducesImageModel) {
  for (const char* name : {"toy_vst", "toy_vivit_st", "toy_vivit_fe"}) {
    const ModelConfig target = preset(name);
    const ModelConfig image = spatial_restriction(target);
    const Model src = build_model(image, 1);
    Model dst = build_model(target, 2);
    const InflationResult r = inflate_2d_to_3d(src.params(), image, target, dst.params());
    load_params(dst.params(), r.params);

    const Tensor frame = random_video({2, 1, 32, 32, 3}, 9);
    const Tensor clip = static_clip(frame, 8);
    EXPECT_LT(max_abs_diff(dst.forward(clip), src.forward(frame)), 1e-4) << name;
    for (const TokenGrid& g : dst.stage_outputs(clip)) EXPECT_LT(max_spread_along_t(g.tokens), 1e-5) << name;
  }
}

TEST(Inflation, StructuralMismatchIsTransferError) {
  const ModelConfig image = spatial_restriction(preset("toy_vst"));
  const Model src = build_model(image, 1);
  const ModelConfig other = preset("toy_uniformer");
  EXPECT_THROW(inflate_2d_to_3d(src.params(), image, other, build_model(other, 1).params()), TransferError);
}

TEST(Inflation, IncompatibleParameterIsNamed) {
  const ModelConfig target = preset("toy_vst");
  const ModelConfig image = spatial_restriction(target);
  const Model src = build_model(image, 1);
  ParamSet tampered;
  for (const auto& [name, t] : src.params().entries()) {
    tampered.add(name, name == "stages.1.blocks.0.mlp.fc1.weight" ? random_tensor({48, 100}, 1) : t.clone());
  }
  try {
    inflate_2d_to_3d(tampered, image, target, build_model(target, 1).params());
    FAIL() << "expected TransferError";
  } catch (const TransferError& e) {
    EXPECT_NE(std::string(e.what()).find("stages.1.blocks.0.mlp.fc1.weight"), std::string::npos) << e.what();
  }
}

TEST(Inflation, SpatialRestrictionHasUnitTemporalExtents) {
  for (const auto& name : preset_names()) {
    const ModelConfig c = spatial_restriction(preset(name));
    EXPECT_EQ(c.patch_size.t, 1) << name;
    EXPECT_EQ(c.resolved_embed_kernel().t, 1) << name;
    for (const auto& s : c.stages) {
      EXPECT_NE(s.kind, AttentionKind::Conv3D) << name;
      if (s.window) EXPECT_EQ(s.window->window.t, 1) << name;
    }
  }
}

TEST(LoadParams, CopiesValuesAndRejectsShapeMismatch) {
  Model a = build_model(preset("toy_mvit"), 1);
  const Model b = build_model(preset("toy_mvit"), 2);
  load_params(a.params(), b.params());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_TRUE(a.params().entries()[i].second.buffer() == b.params().entries()[i].second.buffer());
  }
  const Model c = build_model(preset("toy_vst"), 1);
  EXPECT_THROW(load_params(a.params(), c.params()), TransferError);
}
