#include "vtlab/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "impl.hpp"
#include "vtlab/errors.hpp"

namespace vtlab {

namespace {
thread_local bool t_grad_enabled = true;
thread_local Dtype t_default_dtype = Dtype::F64;
}  // namespace

std::string_view dtype_name(Dtype dtype) { return dtype == Dtype::F32 ? "f32" : "f64"; }

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Buffer::Buffer(Dtype dtype, std::size_t size) : dtype_(dtype) {
  if (dtype == Dtype::F32) {
    data_ = std::vector<float>(size, 0.0f);
  } else {
    data_ = std::vector<double>(size, 0.0);
  }
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Buffer::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void Buffer::set(std::size_t i, double value) {
  std::visit([i, value](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

void Buffer::fill(double value) {
  std::visit(
      [value](auto& v) {
        std::fill(v.begin(), v.end(), static_cast<typename std::decay_t<decltype(v)>::value_type>(value));
      },
      data_);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

PrecisionScope::PrecisionScope(Dtype dtype) : previous_(t_default_dtype) { t_default_dtype = dtype; }
PrecisionScope::~PrecisionScope() { t_default_dtype = previous_; }
Dtype default_dtype() { return t_default_dtype; }

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

namespace {
void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

Tensor Tensor::zeros(const Shape& shape, Dtype dtype) {
  validate_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = Buffer(dtype, static_cast<std::size_t>(numel_of(shape)));
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(const Shape& shape) { return zeros(shape, default_dtype()); }

Tensor Tensor::full(const Shape& shape, double value, Dtype dtype) {
  Tensor t = zeros(shape, dtype);
  t.buffer().fill(value);
  return t;
}

Tensor Tensor::full(const Shape& shape, double value) { return full(shape, value, default_dtype()); }

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, Dtype dtype) {
  Tensor t = zeros(shape, dtype);
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw DimensionError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
  }
  for (std::size_t i = 0; i < values.size(); ++i) t.buffer().set(i, values[i]);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values) {
  return from_values(shape, values, default_dtype());
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), default_dtype());
}

Tensor Tensor::scalar(double value, Dtype dtype) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data = Buffer(dtype, 1);
  impl->data.set(0, value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_buffer(const Shape& shape, Buffer buffer) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(buffer.size()) != numel_of(shape)) {
    throw DimensionError("from_buffer: buffer of " + std::to_string(buffer.size()) +
                         " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(buffer);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  int a = detail::normalize_axis(axis, rank(), "dim");
  return impl_->shape[static_cast<std::size_t>(a)];
}

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
Dtype Tensor::dtype() const { return impl_->data.dtype(); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl_->grad_fn) throw ContractError("set_requires_grad: only leaf tensors can be toggled");
  impl_->requires_grad = on;
  if (!on) impl_->grad.reset();
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->data.get(0);
}

double Tensor::value(std::int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) throw IndexError("value: flat index out of range");
  return impl_->data.get(static_cast<std::size_t>(flat_index));
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(impl_->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = impl_->data.get(i);
  return out;
}

Buffer& Tensor::buffer() { return impl_->data; }
const Buffer& Tensor::buffer() const { return impl_->data; }

bool Tensor::has_grad() const { return impl_->grad.has_value(); }

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor::zeros(shape(), dtype());
  return Tensor::from_buffer(shape(), *impl_->grad);
}

const Buffer* Tensor::grad_buffer() const { return impl_->grad ? &*impl_->grad : nullptr; }

void Tensor::zero_grad() { impl_->grad.reset(); }

Tensor Tensor::clone() const { return Tensor::from_buffer(shape(), impl_->data); }

void Tensor::backward() const {
  if (!impl_) throw ContractError("backward: undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!impl_->requires_grad) throw ContractError("backward: loss does not require grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      detail::TensorImpl* child = node->grad_fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (auto* node : order) {
    if (node->grad_fn) node->grad = Buffer(node->data.dtype(), node->data.size());
  }
  Buffer* root = impl_->grad_target();
  root->set(0, root->get(0) + 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->grad_fn) node->grad_fn->backward(*node);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (auto* node : order) {
    if (node->grad_fn && node != impl_.get()) node->grad.reset();
  }
}

namespace detail {

Tensor make_result(const Shape& shape, Dtype dtype, const char* op, std::vector<const Tensor*> inputs,
                   BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = Buffer(dtype, static_cast<std::size_t>(numel_of(shape)));
  if (grad_enabled()) {
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || (t->defined() && t->requires_grad());
    if (needs) {
      auto node = std::make_shared<Node>();
      node->op = op;
      for (const Tensor* t : inputs) {
        if (t->defined()) node->inputs.push_back(t->impl_ptr());
      }
      node->backward = std::move(backward);
      impl->grad_fn = std::move(node);
      impl->requires_grad = true;
    }
  }
  return Tensor(std::move(impl));
}

void check_finite(const Tensor& t, const char* op) {
  dispatch(t.dtype(), [&]<class T>() {
    for (T v : t.data<T>()) {
      if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
  });
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": mixed precision operands (" +
                        std::string(dtype_name(a.dtype())) + " vs " + std::string(dtype_name(b.dtype())) +
                        ")");
  }
}

}  // namespace detail
}  // namespace vtlab
