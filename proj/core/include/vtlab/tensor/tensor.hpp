#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace vtlab {

enum class Dtype : std::uint8_t { F32, F64 };

std::string_view dtype_name(Dtype dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Contiguous storage of either precision.
class Buffer {
 public:
  Buffer() = default;
  Buffer(Dtype dtype, std::size_t size);

  Dtype dtype() const { return dtype_; }
  std::size_t size() const;

  template <class T>
  std::span<T> as() {
    return std::span<T>(std::get<std::vector<std::remove_const_t<T>>>(data_));
  }
  template <class T>
  std::span<const T> as() const {
    return std::span<const T>(std::get<std::vector<std::remove_const_t<T>>>(data_));
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double v);
  void fill(double v);

  bool operator==(const Buffer& other) const = default;

 private:
  Dtype dtype_ = Dtype::F64;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Dense row-major tensor handle with reverse-mode gradient tracking.
///
/// Copies share the underlying node; use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);

  static Tensor zeros(const Shape& shape, Dtype dtype);
  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value, Dtype dtype);
  static Tensor full(const Shape& shape, double value);
  static Tensor from_values(const Shape& shape, std::span<const double> values, Dtype dtype);
  static Tensor from_values(const Shape& shape, std::span<const double> values);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values);
  static Tensor scalar(double value, Dtype dtype);
  static Tensor from_buffer(const Shape& shape, Buffer buffer);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  std::int64_t numel() const;
  Dtype dtype() const;

  bool requires_grad() const;
  /// Only valid on leaves (tensors not produced by a recorded op).
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  double item() const;
  double value(std::int64_t flat_index) const;
  std::vector<double> values() const;

  template <class T>
  std::span<T> data() {
    return buffer().as<T>();
  }
  template <class T>
  std::span<const T> data() const {
    return buffer().as<T>();
  }
  Buffer& buffer();
  const Buffer& buffer() const;

  bool has_grad() const;
  /// Accumulated gradient as a new constant tensor (zeros when absent).
  Tensor grad() const;
  const Buffer* grad_buffer() const;
  void zero_grad();

  /// Independent copy of the values, no graph.
  Tensor clone() const;
  /// Same values, detached from the graph (copy).
  Tensor detach() const { return clone(); }

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Sets the precision used by tensor factories on the current thread.
class PrecisionScope {
 public:
  explicit PrecisionScope(Dtype dtype);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Dtype previous_;
};

Dtype default_dtype();

}  // namespace vtlab
