#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace accentkit {

// 64-bit FNV-1a; used for config, dataset and sample fingerprints.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  void update(std::span<const double> values) {
    update(std::span(reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()));
  }
  template <typename T>
  void update_pod(const T& value) {
    update(std::span(reinterpret_cast<const unsigned char*>(&value), sizeof(T)));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string fnv1a_hex(std::string_view text);

}  // namespace accentkit
