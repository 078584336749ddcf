#include <algorithm>
#include <cmath>
#include <numbers>

#include "vtlab/data/dataset.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

namespace {

constexpr int kShapes = 2;
constexpr int kHueBins = 5;
constexpr int kDirections = 8;
constexpr double kPanGain = 3.0;
// Smallest frame that fits the largest shape with room to move.
constexpr std::int64_t kMinExtent = 16;

std::uint64_t sample_seed(std::uint64_t seed, Task task, std::int64_t index) {
  // Image and spatial tasks share seeds so images match spatial frame 0.
  const std::uint64_t lane = task == Task::Temporal ? 2 : 1;
  return hash_combine(hash_combine(seed, lane), static_cast<std::uint64_t>(index));
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double x = h * 6.0;
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[sector][c];
}

// Signed offset from a to b on a ring of the given length, in [-len/2, len/2).
double ring_delta(double a, double b, double len) {
  double d = std::fmod(a - b, len);
  if (d < -len / 2) d += len;
  if (d >= len / 2) d -= len;
  return d;
}

double shape_size(int shape, Rng& rng) { return shape == 0 ? rng.uniform(5.5, 6.5) : rng.uniform(3.0, 3.6); }

void check_geometry(const GenSpec& spec) {
  const auto& g = spec.geometry;
  if (g.h < kMinExtent || g.w < kMinExtent)
    throw ConfigError("frame " + std::to_string(g.h) + "x" + std::to_string(g.w) + " is too small to render shapes (min " +
                      std::to_string(kMinExtent) + ")");
  if (g.t < 1) throw ConfigError("clip needs at least one frame");
  if (g.c != 3) throw ConfigError("renderer produces 3 channels, got " + std::to_string(g.c));
  if (spec.classes < 2 || spec.classes > max_classes(spec.task))
    throw ConfigError(to_string(spec.task) + " task supports 2.." + std::to_string(max_classes(spec.task)) +
                      " classes, got " + std::to_string(spec.classes));
  if (spec.n_train < spec.classes) throw ConfigError("n_train must cover every class");
  if (spec.n_val < 0) throw ConfigError("n_val must be non-negative");
}

SampleParams spatial_params(int label, int classes, const ClipGeometry& g, Rng& rng) {
  const int bins = (classes + kShapes - 1) / kShapes;
  SampleParams p;
  p.shape = label % kShapes;
  p.hue = (label / kShapes + rng.uniform(-0.15, 0.15)) / bins;
  p.saturation = rng.uniform(0.85, 1.0);
  p.value = rng.uniform(0.85, 1.0);
  p.size = shape_size(p.shape, rng);
  p.x0 = rng.uniform(0, static_cast<double>(g.w));
  p.y0 = rng.uniform(0, static_cast<double>(g.h));
  const double speed = rng.uniform(0.0, 1.5);
  const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
  p.vx = speed * std::cos(angle);
  p.vy = speed * std::sin(angle);
  p.background = rng.uniform(0.35, 0.55);
  return p;
}

SampleParams temporal_params(int label, const ClipGeometry& g, Rng& rng) {
  SampleParams p;
  p.shape = static_cast<int>(rng.below(kShapes));
  p.hue = rng.uniform();
  // Pale shapes on a darker ground: every channel brightens where the shape
  // is, so motion reads the same way for all hues.
  p.saturation = rng.uniform(0.2, 0.45);
  p.value = rng.uniform(0.9, 1.0);
  p.size = shape_size(p.shape, rng);
  p.x0 = rng.uniform(0, static_cast<double>(g.w));
  p.y0 = rng.uniform(0, static_cast<double>(g.h));
  const double speed = rng.uniform(0.75, 1.25);
  const double angle = label * 2 * std::numbers::pi / kDirections;
  p.vx = speed * std::cos(angle);
  p.vy = speed * std::sin(angle);
  p.background = rng.uniform(0.25, 0.4);
  p.pan = true;
  return p;
}

template <class MakeParams>
Dataset generate_with(const GenSpec& spec, const ClipGeometry& render_geometry, MakeParams make) {
  check_geometry(spec);
  const std::int64_t n = spec.total();
  const std::int64_t per = spec.geometry.numel();
  std::vector<float> data(static_cast<std::size_t>(n * per));
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<SampleParams> params(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    const std::uint64_t seed = sample_seed(spec.seed, spec.task, i);
    Rng rng(seed, 0);
    params[i] = make(label, rng);
    labels[i] = label;
    std::vector<float> clip = render_clip(params[i], render_geometry, seed);
    std::copy_n(clip.begin(), per, data.begin() + i * per);
  }
  return Dataset(spec, std::move(data), std::move(labels), std::move(params));
}

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::Spatial: return "spatial";
    case Task::Temporal: return "temporal";
    case Task::Image: return "image";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  if (name == "spatial") return Task::Spatial;
  if (name == "temporal") return Task::Temporal;
  if (name == "image") return Task::Image;
  throw ConfigError("unknown task '" + name + "' (expected spatial, temporal or image)");
}

int max_classes(Task task) { return task == Task::Temporal ? kDirections : kShapes * kHueBins; }

int temporal_reverse_class(int label) { return (label + kDirections / 2) % kDirections; }

std::vector<float> render_clip(const SampleParams& p, const ClipGeometry& g, std::uint64_t noise_seed) {
  Rng rng(noise_seed, 1);
  const double W = static_cast<double>(g.w), H = static_cast<double>(g.h);

  // Grey texture: periodic low-frequency waves plus static pixel noise. The
  // waves are periodic on the frame so panning them wraps like the shapes do.
  struct Wave {
    double amp, fx, fy, phase;
  };
  const double gain = p.pan ? kPanGain : 1.0;
  Wave waves[3];
  for (Wave& wave : waves) {
    wave.amp = gain * rng.uniform(0.02, 0.05);
    wave.fx = static_cast<double>(static_cast<std::int64_t>(rng.below(7)) - 3);
    wave.fy = static_cast<double>(static_cast<std::int64_t>(rng.below(7)) - 3);
    wave.phase = rng.uniform(0, 2 * std::numbers::pi);
  }
  std::vector<double> grain(static_cast<std::size_t>(g.h * g.w));
  for (double& v : grain) v = 0.03 * rng.normal();
  std::vector<double> texture(grain.size());
  auto paint_texture = [&](double sx, double sy) {
    for (std::int64_t y = 0; y < g.h; ++y)
      for (std::int64_t x = 0; x < g.w; ++x) {
        double v = p.background;
        for (const Wave& wave : waves)
          v += wave.amp * std::sin(2 * std::numbers::pi * (wave.fx * (x - sx) / W + wave.fy * (y - sy) / H) + wave.phase);
        texture[y * g.w + x] = v + grain[y * g.w + x];
      }
  };
  paint_texture(0, 0);

  double rgb[3];
  hsv_to_rgb(p.hue, p.saturation, p.value, rgb);

  std::vector<float> out(static_cast<std::size_t>(g.numel()));
  for (std::int64_t t = 0; t < g.t; ++t) {
    const double cx = p.x0 + p.vx * static_cast<double>(t);
    const double cy = p.y0 + p.vy * static_cast<double>(t);
    if (p.pan && t > 0) paint_texture(p.vx * static_cast<double>(t), p.vy * static_cast<double>(t));
    for (std::int64_t y = 0; y < g.h; ++y)
      for (std::int64_t x = 0; x < g.w; ++x) {
        const double dx = ring_delta(static_cast<double>(x) + 0.5, cx, W);
        const double dy = ring_delta(static_cast<double>(y) + 0.5, cy, H);
        const double sd = p.shape == 0 ? std::hypot(dx, dy) - p.size : std::max(std::abs(dx), std::abs(dy)) - p.size;
        // One-pixel ramp across the edge gives anti-aliased coverage.
        const double alpha = std::clamp(0.5 - sd, 0.0, 1.0);
        const double bg = texture[y * g.w + x] + 0.01 * rng.normal();
        for (std::int64_t c = 0; c < g.c; ++c) {
          const double v = (1 - alpha) * bg + alpha * rgb[c];
          out[((t * g.h + y) * g.w + x) * g.c + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
  }
  return out;
}

Dataset gen_spatial_task(const GenSpec& spec) {
  if (spec.task != Task::Spatial) throw ConfigError("gen_spatial_task needs task=spatial");
  return generate_with(spec, spec.geometry,
                       [&](int label, Rng& rng) { return spatial_params(label, spec.classes, spec.geometry, rng); });
}

Dataset gen_temporal_task(const GenSpec& spec) {
  if (spec.task != Task::Temporal) throw ConfigError("gen_temporal_task needs task=temporal");
  return generate_with(spec, spec.geometry, [&](int label, Rng& rng) { return temporal_params(label, spec.geometry, rng); });
}

Dataset gen_image_task(const GenSpec& spec) {
  if (spec.task != Task::Image) throw ConfigError("gen_image_task needs task=image");
  if (spec.geometry.t != 1) throw ConfigError("image task needs t=1, got " + std::to_string(spec.geometry.t));
  return generate_with(spec, spec.geometry,
                       [&](int label, Rng& rng) { return spatial_params(label, spec.classes, spec.geometry, rng); });
}

Dataset generate(const GenSpec& spec) {
  switch (spec.task) {
    case Task::Spatial: return gen_spatial_task(spec);
    case Task::Temporal: return gen_temporal_task(spec);
    case Task::Image: return gen_image_task(spec);
  }
  throw ConfigError("unknown task");
}

}  // namespace vtlab
