#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace trajgen {

// 64-bit FNV-1a. Used for file checksums, config hashes and seed derivation.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_pod(const T& value) {
    update(&value, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace trajgen
