#pragma once

#include <string>

namespace xinv {

// Incremental SHA-256 so large parameter blobs hash without a copy.
class Sha256Stream {
 public:
  Sha256Stream();
  ~Sha256Stream();
  Sha256Stream(const Sha256Stream&) = delete;
  void update(const void* data, size_t size);
  std::string hex();  // finalizes

 private:
  void* ctx_;
};

}  // namespace xinv
