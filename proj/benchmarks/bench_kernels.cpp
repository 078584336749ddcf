#include <benchmark/benchmark.h>

#include "vtlab/attention/attention.hpp"
#include "vtlab/data/dataset.hpp"
#include "vtlab/models/model.hpp"
#include "vtlab/models/presets.hpp"
#include "vtlab/tensor/ops.hpp"
#include "vtlab/tensor/rng.hpp"

using namespace vtlab;

namespace {

Tensor noise(const Shape& shape, std::uint64_t stream) {
  Rng rng(42, stream);
  return randn(shape, rng, 1.0, Dtype::F32);
}

LinearParams dense(std::int64_t in, std::int64_t out, std::uint64_t stream) {
  return {noise({in, out}, stream), noise({out}, stream + 1)};
}

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = noise({n, n}, 0), b = noise({n, n}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

// Patch-embedding sized conv on one toy clip, then a 3x3x3 conv at stage width.
void BM_Conv3d(benchmark::State& state) {
  const bool embed = state.range(0) == 0;
  const Tensor x = embed ? noise({1, 8, 32, 32, 3}, 0) : noise({1, 4, 8, 8, 24}, 0);
  const Tensor w = embed ? noise({2, 4, 4, 3, 24}, 1) : noise({3, 3, 3, 24, 24}, 1);
  const Tensor b = noise({24}, 2);
  const Conv3dOptions opt = embed ? Conv3dOptions{{2, 4, 4}, {0, 0, 0}, 1} : Conv3dOptions{{1, 1, 1}, {1, 1, 1}, 1};
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, b, opt));
  state.SetLabel(embed ? "patch embed" : "3x3x3");
}
BENCHMARK(BM_Conv3d)->Arg(0)->Arg(1);

void BM_ShiftedWindowAttention(benchmark::State& state) {
  const std::int64_t d = 48;
  TokenGrid g{noise({2, 4, 8, 8, d}, 0)};
  const AttentionParams p{2, dense(d, 3 * d, 1), dense(d, d, 3)};
  const WindowSpec spec{{2, 4, 4}, {state.range(0), 2 * state.range(0), 2 * state.range(0)}};
  for (auto _ : state) benchmark::DoNotOptimize(shifted_window_attention(g, spec, nullptr, p).tokens);
  state.SetLabel(state.range(0) ? "shifted" : "regular");
}
BENCHMARK(BM_ShiftedWindowAttention)->Arg(0)->Arg(1);

void BM_GlobalAttention(benchmark::State& state) {
  const std::int64_t d = 48;
  TokenGrid g{noise({2, 4, 8, 8, d}, 0)};
  const AttentionParams p{2, dense(d, 3 * d, 1), dense(d, d, 3)};
  for (auto _ : state) benchmark::DoNotOptimize(global_st_attention(g, p).tokens);
}
BENCHMARK(BM_GlobalAttention);

// Forward and forward+backward of a toy model on a batch of eight clips.
void BM_ToyForward(benchmark::State& state, const char* name, bool train) {
  const Model model = build_model(preset(name), 0, Dtype::F32);
  const Tensor video = noise({8, 8, 32, 32, 3}, 0);
  for (auto _ : state) {
    Tensor logits = model.forward(video);
    if (train) sum(logits).backward();
    benchmark::DoNotOptimize(logits);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK_CAPTURE(BM_ToyForward, toy_vst, "toy_vst", false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ToyForward, toy_vst_train, "toy_vst", true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ToyForward, toy_uniformer, "toy_uniformer", false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ToyForward, toy_vivit_st, "toy_vivit_st", false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ToyForward, toy_mvit, "toy_mvit", false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ToyForward, toy_i3d, "toy_i3d", false)->Unit(benchmark::kMillisecond);

void BM_RenderClip(benchmark::State& state) {
  SampleParams p;
  p.size = 6;
  p.vx = 1;
  p.pan = state.range(0) != 0;
  const ClipGeometry g;
  for (auto _ : state) benchmark::DoNotOptimize(render_clip(p, g, 7));
}
BENCHMARK(BM_RenderClip)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
