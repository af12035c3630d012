#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "xinv/errors.hpp"

namespace xinv {

// Dense row-major tensor, rank 1..4. Batched activations use NCHW,
// matrices use (rows, cols), stacks use (D, H, W).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(int64_t a) { resize({a}); }
  Tensor(int64_t a, int64_t b) { resize({a, b}); }
  Tensor(int64_t a, int64_t b, int64_t c) { resize({a, b, c}); }
  Tensor(int64_t a, int64_t b, int64_t c, int64_t d) { resize({a, b, c, d}); }

  void resize(std::vector<int64_t> dims) {
    if (dims.empty() || dims.size() > 4) throw shape_error("tensor rank must be 1..4");
    rank_ = static_cast<int>(dims.size());
    dims_.fill(1);
    int64_t n = 1;
    for (size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] <= 0) throw shape_error("tensor dim must be positive");
      dims_[i] = dims[i];
      n *= dims[i];
    }
    v_.assign(static_cast<size_t>(n), T(0));
  }

  bool empty() const { return v_.empty(); }
  int rank() const { return rank_; }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  std::vector<int64_t> dims() const {
    return std::vector<int64_t>(dims_.begin(), dims_.begin() + rank_);
  }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }

  T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  T& at2(int64_t i, int64_t j) { return v_[static_cast<size_t>(i * dims_[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const { return v_[static_cast<size_t>(i * dims_[1] + j)]; }
  T& at3(int64_t d, int64_t y, int64_t x) {
    return v_[static_cast<size_t>((d * dims_[1] + y) * dims_[2] + x)];
  }
  const T& at3(int64_t d, int64_t y, int64_t x) const {
    return v_[static_cast<size_t>((d * dims_[1] + y) * dims_[2] + x)];
  }
  T& at4(int64_t n, int64_t c, int64_t y, int64_t x) {
    return v_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x)];
  }
  const T& at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return v_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x)];
  }

  void fill(T value) { std::fill(v_.begin(), v_.end(), value); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && dims_ == o.dims_; }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[static_cast<size_t>(i)]);
    }
    return s + ")";
  }

 private:
  std::vector<T> v_;
  std::array<int64_t, 4> dims_{1, 1, 1, 1};
  int rank_ = 0;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
T tensor_min(const Tensor<T>& t) {
  T m = t[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::min(m, t[i]);
  return m;
}

template <typename T>
T tensor_max(const Tensor<T>& t) {
  T m = t[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::max(m, t[i]);
  return m;
}

}  // namespace xinv
