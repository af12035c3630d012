#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Minimal NumPy .npy v1.0 reader/writer, C-order only. Covers the dtypes the
// pipeline stores: <f4, <f8, <i4, <i8, |u1.

namespace xinv {

struct Npy {
  std::string dtype;
  std::vector<int64_t> shape;
  std::vector<char> data;

  int64_t count() const {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  template <typename T>
  const T* as() const;
};

template <typename T>
const char* npy_dtype();

Npy npy_load(const std::string& path);
void npy_save(const std::string& path, const std::string& dtype,
              const std::vector<int64_t>& shape, const void* data, size_t bytes);

template <typename T>
void npy_save(const std::string& path, const std::vector<int64_t>& shape, const T* data) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  npy_save(path, npy_dtype<T>(), shape, data, size_t(n) * sizeof(T));
}

}  // namespace xinv
