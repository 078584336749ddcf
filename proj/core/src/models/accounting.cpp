#include "vtlab/models/accounting.hpp"

#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geometry.hpp"

namespace vtlab {

namespace {

using detail::BlockGeometry;
using i64 = std::int64_t;

i64 linear_params(i64 in, i64 out, bool bias = true) { return in * out + (bias ? out : 0); }
i64 norm_params(i64 d) { return 2 * d; }
i64 mlp_params(i64 d, i64 ratio) { return linear_params(d, ratio * d) + linear_params(ratio * d, d); }
i64 attention_params(i64 din, i64 dout) { return linear_params(din, 3 * dout) + linear_params(dout, dout); }
i64 encoder_block_params(i64 d, i64 ratio) { return 2 * norm_params(d) + attention_params(d, d) + mlp_params(d, ratio); }

i64 block_params(const ModelConfig& c, const StageSpec& s, const BlockGeometry& g) {
  const i64 din = g.dim_in, d = s.dim;
  i64 n = norm_params(din) + norm_params(d) + mlp_params(d, c.mlp_ratio);
  if (c.conv_position_embedding) n += c.dpe_kernel.volume() * din + din;
  switch (s.kind) {
    case AttentionKind::LocalWindow:
    case AttentionKind::ShiftedLocalWindow:
      n += attention_params(din, d);
      if (c.use_relpos_bias) n += RelPosBiasTable::entries(s.window->window) * s.heads;
      break;
    case AttentionKind::Global:
      n += attention_params(din, d);
      break;
    case AttentionKind::LocalMHRA:
      n += linear_params(din, d) + s.kernel.volume() * d + d + linear_params(d, d);
      break;
    case AttentionKind::PooledAttention: {
      const i64 pool = s.pool_strides->kernel.volume() * d + norm_params(d);
      n += attention_params(din, d);
      if (g.q_stride != Extent3{1, 1, 1}) n += pool;
      if (g.kv_stride != Extent3{1, 1, 1}) n += 2 * pool;
      if (c.use_relpos_bias) n += (2 * g.in.t - 1 + 2 * g.in.h - 1 + 2 * g.in.w - 1) * s.heads;
      if (din != d) n += linear_params(din, d);
      break;
    }
    default:
      break;
  }
  return n;
}

i64 conv_block_params(const StageSpec& s, const BlockGeometry& g, int index) {
  const i64 din = g.dim_in, inner = s.inner_dim, d = s.dim;
  const i64 kt = s.temporal_kernels[static_cast<std::size_t>(index)];
  i64 n = kt * din * inner + norm_params(inner) + 9 * inner * inner + norm_params(inner) + inner * d + norm_params(d);
  const i64 stride = index == 0 ? s.spatial_stride : 1;
  if (din != d || stride != 1) n += din * d + norm_params(d);
  return n;
}

i64 merge_params(const ModelConfig& c, i64 d, i64 next) {
  if (c.merge_kind == MergeKind::PatchMerging) return norm_params(4 * d) + linear_params(4 * d, next, false);
  return 4 * d * next + next + norm_params(next);
}

Extent3 ceil_to(Extent3 e, Extent3 w) {
  return {(e.t + w.t - 1) / w.t * w.t, (e.h + w.h - 1) / w.h * w.h, (e.w + w.w - 1) / w.w * w.w};
}

struct Macs {
  i64 macs = 0;
  i64 elements = 0;
};

Macs encoder_block_macs(i64 tokens_per_seq, i64 seqs, i64 d, i64 ratio) {
  const i64 tokens = tokens_per_seq * seqs;
  Macs m;
  m.macs = tokens * (3 * d * d + d * d + 2 * ratio * d * d) + seqs * 2 * tokens_per_seq * tokens_per_seq * d;
  m.elements = seqs * tokens_per_seq * tokens_per_seq;
  return m;
}

Macs block_macs(const ModelConfig& c, const StageSpec& s, const BlockGeometry& g, int index) {
  const i64 din = g.dim_in, d = s.dim;
  const i64 vin = g.in.volume(), vout = g.out.volume();
  Macs m;
  if (is_convolutional(s.kind)) {
    const i64 kt = s.temporal_kernels[static_cast<std::size_t>(index)];
    const i64 inner = s.inner_dim;
    m.macs = vin * kt * din * inner + vout * 9 * inner * inner + vout * inner * d;
    const i64 stride = index == 0 ? s.spatial_stride : 1;
    if (din != d || stride != 1) m.macs += vout * din * d;
    return m;
  }
  if (c.conv_position_embedding) m.macs += vin * c.dpe_kernel.volume() * din;
  switch (s.kind) {
    case AttentionKind::LocalWindow:
    case AttentionKind::ShiftedLocalWindow: {
      const WindowSpec eff = effective_window(*s.window, g.in);
      const Extent3 padded = ceil_to(g.in, eff.window);
      const i64 L = eff.window.volume();
      const i64 nw = padded.volume() / L;
      m.macs += padded.volume() * (din * 3 * d + d * d) + 2 * nw * L * L * d;
      m.elements = nw * L * L;
      break;
    }
    case AttentionKind::Global:
      m.macs += vin * (din * 3 * d + d * d) + 2 * vin * vin * d;
      m.elements = vin * vin;
      break;
    case AttentionKind::LocalMHRA:
      m.macs += vin * din * d + vin * s.kernel.volume() * d + vin * d * d;
      break;
    case AttentionKind::PooledAttention: {
      const i64 k = s.pool_strides->kernel.volume();
      const i64 vkv = g.kv_grid.volume();
      m.macs += vin * din * 3 * d;
      if (g.q_stride != Extent3{1, 1, 1}) m.macs += vout * k * d;
      if (g.kv_stride != Extent3{1, 1, 1}) m.macs += 2 * vkv * k * d;
      m.macs += 2 * vout * vkv * d + vout * d * d;
      if (din != d) m.macs += vin * din * d;
      m.elements = vout * vkv;
      break;
    }
    default:
      break;
  }
  m.macs += vout * 2 * c.mlp_ratio * d * d;
  return m;
}

}  // namespace

ParamReport count_params(const ModelConfig& c) {
  validate(c);
  ParamReport r;
  r.model = c.name;
  auto push = [&](std::string part, i64 n) {
    r.parts.push_back({std::move(part), n});
    r.total += n;
  };
  if (c.family == Family::Linear) {
    push("head", linear_params(c.in_channels, c.num_classes));
    return r;
  }
  const detail::ModelGeometry geo = detail::trace_geometry(c, c.input_size);
  const i64 edim = c.resolved_embed_dim();
  i64 embed = c.resolved_embed_kernel().volume() * c.in_channels * edim;
  if (c.embed_bias) embed += edim;
  if (c.embed_norm) embed += norm_params(edim);
  if (c.positional_embedding == PositionalEmbedding::Absolute) {
    embed += (c.factorized() ? geo.stem.h * geo.stem.w : geo.stem.volume()) * edim;
  }
  push("embed", embed);

  const i64 out_dim = c.stages.back().dim;
  if (c.factorized()) {
    const StageSpec& s = c.stages.front();
    i64 spatial = s.depth * encoder_block_params(s.dim, c.mlp_ratio) + norm_params(s.dim);
    if (c.frame_repr == FrameRepr::ClassToken) spatial += s.dim;
    push("spatial", spatial);
    push("temporal", geo.stem.t * s.dim + c.temporal_depth * encoder_block_params(s.dim, c.mlp_ratio));
  } else {
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
      const StageSpec& s = c.stages[i];
      i64 n = 0;
      for (int j = 0; j < s.depth; ++j) {
        const BlockGeometry& g = geo.stages[i].blocks[static_cast<std::size_t>(j)];
        n += is_convolutional(s.kind) ? conv_block_params(s, g, j) : block_params(c, s, g);
      }
      if (s.merge_after) n += merge_params(c, s.dim, c.stages[i + 1].dim);
      push("stage" + std::to_string(i), n);
    }
  }
  push("head", (c.final_norm ? norm_params(out_dim) : 0) + linear_params(out_dim, c.num_classes));
  return r;
}

FlopReport count_flops(const ModelConfig& c, std::optional<Extent3> input, std::int64_t batch) {
  validate(c);
  FlopReport r;
  r.model = c.name;
  r.input = input.value_or(c.input_size);
  r.batch = batch;
  r.views = c.reported_views;
  auto push = [&](std::string part, Macs m) {
    m.macs *= batch;
    m.elements *= batch;
    r.parts.push_back({std::move(part), m.macs, m.elements});
    r.macs += m.macs;
    r.attention_elements += m.elements;
  };
  if (c.family == Family::Linear) {
    push("head", {c.in_channels * c.num_classes, 0});
    return r;
  }
  const detail::ModelGeometry geo = detail::trace_geometry(c, r.input);
  const i64 edim = c.resolved_embed_dim();
  push("embed", {geo.embed.volume() * c.resolved_embed_kernel().volume() * c.in_channels * edim, 0});

  const i64 out_dim = c.stages.back().dim;
  if (c.factorized()) {
    const StageSpec& s = c.stages.front();
    const i64 frame_tokens = geo.stem.h * geo.stem.w + (c.frame_repr == FrameRepr::ClassToken ? 1 : 0);
    Macs spatial;
    Macs temporal;
    for (int j = 0; j < s.depth; ++j) {
      const Macs m = encoder_block_macs(frame_tokens, geo.stem.t, s.dim, c.mlp_ratio);
      spatial.macs += m.macs;
      spatial.elements += m.elements;
    }
    for (int j = 0; j < c.temporal_depth; ++j) {
      const Macs m = encoder_block_macs(geo.stem.t, 1, s.dim, c.mlp_ratio);
      temporal.macs += m.macs;
      temporal.elements += m.elements;
    }
    push("spatial", spatial);
    push("temporal", temporal);
  } else {
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
      const StageSpec& s = c.stages[i];
      Macs st;
      for (int j = 0; j < s.depth; ++j) {
        const Macs m = block_macs(c, s, geo.stages[i].blocks[static_cast<std::size_t>(j)], j);
        st.macs += m.macs;
        st.elements += m.elements;
      }
      if (s.merge_after) st.macs += geo.stages[i].next.volume() * 4 * s.dim * c.stages[i + 1].dim;
      push("stage" + std::to_string(i), st);
    }
  }
  push("head", {out_dim * c.num_classes, 0});
  return r;
}

nlohmann::json to_json(const ParamReport& report) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : report.parts) parts.push_back({{"part", p.part}, {"params", p.params}});
  return {{"model", report.model}, {"total", report.total}, {"millions", report.millions()}, {"parts", parts}};
}

nlohmann::json to_json(const FlopReport& report) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : report.parts) {
    parts.push_back({{"part", p.part}, {"macs", p.macs}, {"attention_elements", p.attention_elements}});
  }
  return {{"model", report.model},
          {"input", {report.input.t, report.input.h, report.input.w}},
          {"batch", report.batch},
          {"views", report.views},
          {"macs", report.macs},
          {"flops", report.flops()},
          {"gmacs", report.gmacs_per_view_set()},
          {"gflops", report.gflops_per_view_set()},
          {"attention_elements", report.attention_elements},
          {"convention", "1 MAC = 2 FLOPs; norms, activations, softmax and pooling are not counted"},
          {"parts", parts}};
}

std::string format_table(const ParamReport& report) {
  std::ostringstream os;
  os << "model " << report.model << "\n";
  os << std::left << std::setw(12) << "part" << std::right << std::setw(16) << "params" << "\n";
  for (const auto& p : report.parts) os << std::left << std::setw(12) << p.part << std::right << std::setw(16) << p.params << "\n";
  os << std::left << std::setw(12) << "total" << std::right << std::setw(16) << report.total << "  ("
     << std::fixed << std::setprecision(2) << report.millions() << "M)\n";
  return os.str();
}

std::string format_table(const FlopReport& report) {
  std::ostringstream os;
  os << "model " << report.model << "  input " << report.input.str() << "  batch " << report.batch << "  views "
     << report.views << "\n";
  os << std::left << std::setw(12) << "part" << std::right << std::setw(18) << "MACs" << std::setw(18)
     << "attn pairs" << "\n";
  for (const auto& p : report.parts) {
    os << std::left << std::setw(12) << p.part << std::right << std::setw(18) << p.macs << std::setw(18)
       << p.attention_elements << "\n";
  }
  os << std::left << std::setw(12) << "total" << std::right << std::setw(18) << report.macs << std::setw(18)
     << report.attention_elements << "\n";
  os << std::fixed << std::setprecision(2) << "GMACs x views " << report.gmacs_per_view_set() << "  GFLOPs x views "
     << report.gflops_per_view_set() << "\n";
  return os.str();
}

}  // namespace vtlab
