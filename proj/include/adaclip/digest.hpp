#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaclip/tensor.hpp"

namespace adaclip {

// Incremental SHA-256 (OpenSSL EVP underneath).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  void update_u64(std::uint64_t v);
  // Shape extents followed by the little-endian IEEE-754 payload.
  void update(const Tensor& t);
  std::array<unsigned char, 32> finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string to_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string tensor_digest(const Tensor& t);
// Digest over (name, shape, payload) of every parameter in order.
std::string parameters_digest(const std::vector<const Parameter*>& params);

}  // namespace adaclip
