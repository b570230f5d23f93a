#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>

// FNV-1a content hashing shared by every artifact format in the library:
// cheap, dependency-free, stable across platforms, and good enough to catch
// truncation, corruption, and load-against-the-wrong-model mistakes (it is
// not a cryptographic integrity guarantee).
namespace adnnperf {

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// Chainable variant for hashing a sequence of typed fields.
template <typename T>
std::uint64_t fnv1a64_value(const T& v,
                            std::uint64_t h = 0xcbf29ce484222325ull) {
  static_assert(std::is_trivially_copyable_v<T>);
  return fnv1a64(&v, sizeof(v), h);
}

}  // namespace adnnperf
