#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "dattn/tensor.hpp"

namespace dattn {

/// Counter-based generator: the i-th draw is splitmix64(key + i * phi),
/// with the key derived from (seed, stream). Only integer arithmetic feeds
/// the bit stream, so sequences are identical on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);

  Tensor uniform_tensor(const Shape& shape, double lo, double hi);
  Tensor normal_tensor(const Shape& shape, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derives a child seed, e.g. for one model in a sweep.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dattn
