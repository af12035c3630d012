#include "xinv/sha_stream.hpp"

#include <openssl/evp.h>

#include "xinv/errors.hpp"

namespace xinv {

Sha256Stream::Sha256Stream() {
  EVP_MD_CTX* c = EVP_MD_CTX_new();
  if (!c || !EVP_DigestInit_ex(c, EVP_sha256(), nullptr))
    throw io_error("sha256 stream init failed");
  ctx_ = c;
}

Sha256Stream::~Sha256Stream() {
  if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256Stream::update(const void* data, size_t size) {
  if (!EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size))
    throw io_error("sha256 stream update failed");
}

std::string Sha256Stream::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md, &len))
    throw io_error("sha256 stream final failed");
  static const char* h = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = h[md[i] >> 4];
    out[2 * i + 1] = h[md[i] & 0xf];
  }
  return out;
}

}  // namespace xinv
