#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <type_traits>

namespace spr {

/// Incremental FNV-1a (64-bit) over little-endian byte images.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < n; ++k) {
      state_ ^= p[k];
      state_ *= 0x100000001b3ULL;
    }
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void value(T v) {
    bytes(&v, sizeof v);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void values(std::span<const T> vs) {
    for (T v : vs) value(v);
  }

  void text(std::string_view s) { bytes(s.data(), s.size()); }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace spr
