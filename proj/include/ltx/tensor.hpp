#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ltx/errors.hpp"

namespace ltx {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    if (e <= 0) throw contract_error("non-positive tensor extent");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// Dense row-major tensor with a fixed shape. Scalar type is f32 for training,
// f64 for gradient-check runs, u8 for binary masks.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T{}) {}

  Tensor(Shape shape, T fill)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw contract_error("tensor data length does not match shape " +
                           shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return {data_.data(), data_.size()}; }
  std::span<const T> span() const { return {data_.data(), data_.size()}; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw contract_error(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Same check for tensors of different element types (e.g. weight vs mask).
inline void require_same_shape_generic(const Shape& a, const Shape& b,
                                       const char* op) {
  if (a != b)
    throw contract_error(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
}

// Hadamard product; shapes must match.
template <typename T>
inline Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_mul");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  return out;
}

template <typename T>
inline void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_inplace");
  T* pa = a.data();
  const T* pb = b.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) pa[i] += pb[i];
}

template <typename T>
inline void scale_inplace(Tensor<T>& a, T s) {
  T* pa = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) pa[i] *= s;
}

// Sequential left-to-right accumulation; the order is part of the contract
// (reductions are bit-identical across runs).
template <typename T>
inline T sum(const Tensor<T>& a) {
  T acc{};
  const T* p = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

template <typename T>
inline T max_abs(const Tensor<T>& a) {
  T m{};
  const T* p = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    T v = p[i] < T{} ? static_cast<T>(-p[i]) : p[i];
    if (v > m) m = v;
  }
  return m;
}

template <typename T>
inline bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

template <typename T>
inline bool all_finite(const Tensor<T>& a) {
  const T* p = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

template <typename T>
inline void check_finite(const Tensor<T>& a, const std::string& context) {
  if (!all_finite(a))
    throw numeric_error("non-finite value in " + context);
}

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
  if constexpr (std::is_same_v<T, float>) return Dtype::f32;
  else if constexpr (std::is_same_v<T, double>) return Dtype::f64;
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

}  // namespace ltx
