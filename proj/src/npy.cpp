#include "xinv/npy.hpp"

#include <cstring>

#include "xinv/errors.hpp"
#include "xinv/io.hpp"

namespace xinv {

template <> const char* npy_dtype<float>() { return "<f4"; }
template <> const char* npy_dtype<double>() { return "<f8"; }
template <> const char* npy_dtype<int32_t>() { return "<i4"; }
template <> const char* npy_dtype<int64_t>() { return "<i8"; }
template <> const char* npy_dtype<uint8_t>() { return "|u1"; }

namespace {

size_t dtype_size(const std::string& d) {
  if (d == "<f4" || d == "<i4") return 4;
  if (d == "<f8" || d == "<i8") return 8;
  if (d == "|u1") return 1;
  throw unsupported_error("npy dtype not handled: " + d);
}

const char kMagic[] = "\x93NUMPY";

}  // namespace

template <typename T>
const T* Npy::as() const {
  if (dtype != npy_dtype<T>())
    throw validation_error("npy dtype mismatch: have " + dtype + ", want " + npy_dtype<T>());
  return reinterpret_cast<const T*>(data.data());
}
template const float* Npy::as<float>() const;
template const double* Npy::as<double>() const;
template const int32_t* Npy::as<int32_t>() const;
template const int64_t* Npy::as<int64_t>() const;
template const uint8_t* Npy::as<uint8_t>() const;

Npy npy_load(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw io_error("not an npy file: " + path);
  if (bytes[6] != 1) throw unsupported_error("npy version != 1.0: " + path);
  uint16_t hlen = uint16_t(bytes[8]) | uint16_t(bytes[9]) << 8;
  if (bytes.size() < size_t(10) + hlen) throw io_error("truncated npy header: " + path);
  std::string header(reinterpret_cast<char*>(bytes.data()) + 10, hlen);

  auto field = [&](const std::string& key) -> std::string {
    auto pos = header.find("'" + key + "'");
    if (pos == std::string::npos) throw io_error("npy header missing " + key + ": " + path);
    pos = header.find(':', pos);
    auto end = pos;
    int depth = 0;
    for (++end; end < header.size(); ++end) {
      char c = header[end];
      if (c == '(') ++depth;
      if (c == ')') --depth;
      if (c == ',' && depth == 0) break;
      if (c == '}' && depth == 0) break;
    }
    return header.substr(pos + 1, end - pos - 1);
  };
  auto strip = [](std::string s) {
    size_t a = s.find_first_not_of(" '\t");
    size_t b = s.find_last_not_of(" '\t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };

  Npy out;
  out.dtype = strip(field("descr"));
  if (strip(field("fortran_order")) != "False")
    throw unsupported_error("fortran-order npy not supported: " + path);
  std::string sh = strip(field("shape"));
  // sh looks like "(3, 4)" or "(5,)" or "()"
  int64_t cur = -1;
  for (char c : sh) {
    if (c >= '0' && c <= '9')
      cur = (cur < 0 ? 0 : cur * 10) + (c - '0');
    else if (cur >= 0) {
      out.shape.push_back(cur);
      cur = -1;
    }
  }
  size_t want = size_t(out.count()) * dtype_size(out.dtype);
  size_t have = bytes.size() - 10 - hlen;
  if (have != want)
    throw io_error("npy payload size mismatch in " + path + ": have " + std::to_string(have) +
                   ", want " + std::to_string(want));
  out.data.assign(bytes.begin() + 10 + hlen, bytes.end());
  return out;
}

void npy_save(const std::string& path, const std::string& dtype,
              const std::vector<int64_t>& shape, const void* data, size_t bytes) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  if (size_t(n) * dtype_size(dtype) != bytes)
    throw validation_error("npy_save size mismatch for " + path);

  std::string sh = "(";
  for (size_t i = 0; i < shape.size(); ++i) sh += std::to_string(shape[i]) + ", ";
  if (shape.size() > 1) sh.resize(sh.size() - 2);  // keep the trailing comma for 1-tuples
  else if (shape.size() == 1) sh.resize(sh.size() - 1);
  sh += ")";
  std::string dict =
      "{'descr': '" + dtype + "', 'fortran_order': False, 'shape': " + sh + ", }";
  size_t total = 10 + dict.size() + 1;
  size_t pad = (64 - total % 64) % 64;
  dict += std::string(pad, ' ');
  dict += '\n';

  std::string head(kMagic, 6);
  head += char(1);
  head += char(0);
  head += char(dict.size() & 0xff);
  head += char(dict.size() >> 8);
  head += dict;

  std::vector<char> buf(head.begin(), head.end());
  buf.insert(buf.end(), static_cast<const char*>(data), static_cast<const char*>(data) + bytes);
  write_file(path, buf.data(), buf.size());
}

}  // namespace xinv
