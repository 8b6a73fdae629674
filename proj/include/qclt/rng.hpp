#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace qclt {

// Splittable counter-based generator (SplitMix64 output function over an
// incrementing counter). Streams are derived from (master_seed, stream name,
// index), so replica i's stream is identical no matter which thread runs it
// or in what order.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t key) : counter_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Deterministic stream-key derivation; name_tag keeps unrelated uses of the
  // same master seed (chain sampling, random directions, fixtures) disjoint.
  static std::uint64_t derive_key(std::uint64_t master, std::string_view name_tag,
                                  std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
    for (char c : name_tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return mix(mix(master ^ h) + 0x9e3779b97f4a7c15ULL * (index + 1));
  }

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix(counter_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Sample an index from a discrete distribution given as a probability row.
  // Linear CDF scan; rows here have at most a few dozen entries.
  template <typename Derived>
  Eigen::Index sample(const Eigen::DenseBase<Derived>& probs) {
    const double u = next_double();
    double acc = 0.0;
    const Eigen::Index n = probs.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;  // guard against accumulated rounding
  }

 private:
  std::uint64_t counter_;
};

}  // namespace qclt
