#include "adaclip/digest.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>

#include "adaclip/errors.hpp"

namespace adaclip {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    throw EnvironmentError("sha256: failed to initialise digest context");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(impl_->ctx); }

void Sha256::update(std::span<const unsigned char> bytes) {
  EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
}

void Sha256::update(std::string_view text) {
  update(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

void Sha256::update_u64(std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  update(std::span<const unsigned char>(buf, 8));
}

void Sha256::update(const Tensor& t) {
  update_u64(t.rank());
  for (std::size_t e : t.shape()) update_u64(e);
  for (double v : t.data()) update_u64(std::bit_cast<std::uint64_t>(v));
}

std::array<unsigned char, 32> Sha256::finish() {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
  return out;
}

std::string to_hex(std::span<const unsigned char> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text);
  return to_hex(h.finish());
}

std::string tensor_digest(const Tensor& t) {
  Sha256 h;
  h.update(t);
  return to_hex(h.finish());
}

std::string parameters_digest(const std::vector<const Parameter*>& params) {
  Sha256 h;
  for (const Parameter* p : params) {
    h.update(p->name);
    h.update(p->value);
  }
  return to_hex(h.finish());
}

}  // namespace adaclip
