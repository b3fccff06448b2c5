#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string_view>

namespace flowrec {

// Counter-free xoshiro256** stream. Hand-rolled transforms keep draws
// bit-identical across platforms and make the state trivially serializable,
// which the checkpoint format relies on.
class RngStream {
 public:
  RngStream() : state_{1, 2, 3, 4} {}

  // Derives an independent stream from a root seed and a stream name, so
  // ablations that stop consuming one stream leave the others untouched.
  static RngStream from_seed(uint64_t root_seed, std::string_view stream_name);

  uint64_t next_u64();

  // [0, 1), 53-bit resolution
  double uniform01();

  // (0, 1]
  double uniform01_open0();

  // N(0, 1) via Box-Muller; consumes two uniforms per call (stateless)
  double gaussian();

  // uniform integer in [0, n), n >= 1
  uint64_t bounded(uint64_t n);

  // Fisher-Yates over [first, last)
  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = bounded(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  const std::array<uint64_t, 4>& state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<uint64_t, 4> state_;
};

uint64_t splitmix64(uint64_t& x);

// FNV-1a over bytes; used for config hashing
uint64_t fnv1a(std::string_view bytes);

}  // namespace flowrec
