#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace medsum {

// 64-bit mix (splitmix64 finalizer). Stateless, so streams can be derived
// from arbitrary keys without sharing state across threads.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Counter-based generator: the n-th output is a pure function of
// (seed, stream, n), so per-item streams are reproducible regardless of
// evaluation order or parallelism.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  CounterRng(std::uint64_t seed, std::string_view stream_key)
      : CounterRng(seed, fnv1a(stream_key)) {}

  // Independent child stream, e.g. one per dataset pair or per epoch.
  CounterRng derive(std::string_view key) const {
    return CounterRng(seed_, mix64(stream_ ^ fnv1a(key)));
  }
  CounterRng derive(std::uint64_t key) const {
    return CounterRng(seed_, mix64(stream_ ^ mix64(key)));
  }

  std::uint64_t next_u64() {
    return mix64(mix64(seed_ ^ 0x2545f4914f6cdd1dull) ^ mix64(stream_) ^
                 counter_++);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n). Rejection-free modulo bias is negligible for the
  // ranges used here, but keep it unbiased anyway.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace medsum
