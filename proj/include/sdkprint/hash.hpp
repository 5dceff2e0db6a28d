#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace sdkprint {

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

/// 64-bit FNV-1a over a byte string.
constexpr std::uint64_t stable_hash(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = kFnvOffsetBasis;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t stable_hash(std::string_view text) noexcept {
  std::uint64_t h = kFnvOffsetBasis;
  for (char c : text) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

/// Incremental FNV-1a, for hashing a canonical serialization without
/// materializing it.
class StableHasher {
public:
  constexpr void byte(std::uint8_t b) noexcept {
    state_ ^= b;
    state_ *= kFnvPrime;
  }

  // 8-byte big-endian encoding.
  constexpr void word_be(std::uint64_t w) noexcept {
    for (int shift = 56; shift >= 0; shift -= 8) byte(static_cast<std::uint8_t>(w >> shift));
  }

  constexpr void text(std::string_view s) noexcept {
    for (char c : s) byte(static_cast<std::uint8_t>(c));
  }

  [[nodiscard]] constexpr std::uint64_t value() const noexcept { return state_; }

private:
  std::uint64_t state_ = kFnvOffsetBasis;
};

}  // namespace sdkprint
