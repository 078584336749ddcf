#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vtlab/tensor/tensor.hpp"

namespace vtlab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct AdamWState {
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update using each parameter's accumulated gradient.
/// Parameters without a gradient are left untouched.
void adamw_step(std::span<Tensor> params, AdamWState& state, const AdamWConfig& config);

/// Global L2 norm of all parameter gradients.
double grad_norm(std::span<const Tensor> params);
/// Scales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace vtlab
