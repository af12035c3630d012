#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xinv {

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, size_t size);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

std::string sha256_hex(const void* data, size_t size);
std::string sha256_file(const std::string& path);

// gzip (or zlib) wrapped buffer -> raw bytes
std::vector<unsigned char> gunzip(const unsigned char* data, size_t size);

// raw bytes -> gzip container
std::vector<unsigned char> gzip(const unsigned char* data, size_t size);

}  // namespace xinv
