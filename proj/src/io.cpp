#include "xinv/io.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cstdio>
#include <filesystem>

#include "xinv/errors.hpp"

namespace xinv {

std::vector<unsigned char> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw io_error("cannot open for reading: " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> buf(static_cast<size_t>(size));
  size_t got = size ? std::fread(buf.data(), 1, buf.size(), f) : 0;
  std::fclose(f);
  if (got != buf.size()) throw io_error("short read: " + path);
  return buf;
}

void write_file(const std::string& path, const void* data, size_t size) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open for writing: " + path);
  size_t put = size ? std::fwrite(data, 1, size, f) : 0;
  bool ok = (put == size) && std::fclose(f) == 0;
  if (!ok) throw io_error("short write: " + path);
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw io_error("cannot create directory: " + path + " (" + ec.message() + ")");
}

std::string sha256_hex(const void* data, size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr))
    throw io_error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  auto bytes = read_file(path);
  return sha256_hex(bytes.data(), bytes.size());
}

std::vector<unsigned char> gunzip(const unsigned char* data, size_t size) {
  z_stream zs{};
  // 15+32: accept both zlib and gzip headers
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw io_error("inflate init failed");
  std::vector<unsigned char> out;
  out.reserve(size * 3);
  zs.next_in = const_cast<unsigned char*>(data);
  zs.avail_in = uInt(size);
  unsigned char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw io_error("corrupt gzip stream (zlib rc " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::vector<unsigned char> gzip(const unsigned char* data, size_t size) {
  z_stream zs{};
  // 15+16: emit a gzip header
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw io_error("deflate init failed");
  std::vector<unsigned char> out;
  zs.next_in = const_cast<unsigned char*>(data);
  zs.avail_in = uInt(size);
  unsigned char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = deflate(&zs, Z_FINISH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      deflateEnd(&zs);
      throw io_error("deflate failed (zlib rc " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
  }
  deflateEnd(&zs);
  return out;
}

}  // namespace xinv
