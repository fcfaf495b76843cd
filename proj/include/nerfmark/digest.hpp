#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nerfmark/common.hpp"

namespace nerfmark {

using Sha256Digest = std::array<uint8_t, 32>;

inline Sha256Digest sha256(std::span<const uint8_t> data) {
  Sha256Digest out{};
  unsigned int len = 0;
  int ok = EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  NM_CHECK(ok == 1 && len == 32, "sha256: digest computation failed");
  return out;
}

inline Sha256Digest sha256(const std::vector<uint8_t>& data) {
  return sha256(std::span<const uint8_t>(data.data(), data.size()));
}

inline std::string hex(std::span<const uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xF]);
  }
  return s;
}

inline std::string sha256_hex(std::span<const uint8_t> data) {
  auto d = sha256(data);
  return hex(std::span<const uint8_t>(d.data(), d.size()));
}

}  // namespace nerfmark
