#include "vtlab/tensor/optim.hpp"

#include <cmath>

#include "impl.hpp"

namespace vtlab {

using detail::dispatch;

void adamw_step(std::span<Tensor> params, AdamWState& state, const AdamWConfig& config) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.dtype(), static_cast<std::size_t>(p.numel()));
      state.v.emplace_back(p.dtype(), static_cast<std::size_t>(p.numel()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  if (config.lr == 0.0) return;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    const Buffer* g = p.grad_buffer();
    if (!g) continue;
    dispatch(p.dtype(), [&]<class T>() {
      auto w = p.data<T>();
      auto gv = g->as<const T>();
      auto m = state.m[k].as<T>();
      auto v = state.v[k].as<T>();
      const double decay = 1.0 - config.lr * config.weight_decay;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = gv[i];
        const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
        const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = (mi / bc1) / (std::sqrt(vi / bc2) + config.eps);
        w[i] = static_cast<T>(w[i] * decay - config.lr * update);
      }
    });
  }
}

double grad_norm(std::span<const Tensor> params) {
  double total = 0;
  for (const Tensor& p : params) {
    const Buffer* g = p.grad_buffer();
    if (!g) continue;
    for (std::size_t i = 0; i < g->size(); ++i) total += g->get(i) * g->get(i);
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = grad_norm(std::span<const Tensor>(params.data(), params.size()));
  if (norm > max_norm && norm > 0) {
    const double factor = max_norm / norm;
    for (Tensor& p : params) {
      auto* g = const_cast<Buffer*>(p.grad_buffer());
      if (!g) continue;
      dispatch(g->dtype(), [&]<class T>() {
        for (T& x : g->as<T>()) x = static_cast<T>(x * factor);
      });
    }
  }
  return norm;
}

}  // namespace vtlab
