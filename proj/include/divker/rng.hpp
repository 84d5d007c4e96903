#pragma once

#include "divker/types.hpp"

#include <cstdint>
#include <random>

namespace divker {

/// Purpose tag for a random stream. Different purposes of the same path
/// never share draws.
enum class StreamKind : std::uint64_t {
  Initial = 1,
  Increments = 2,
  Bootstrap = 3,
  Dataset = 4,
  Evaluation = 5,
};

/// SplitMix64 finalizer, used to derive stream keys.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent 64-bit key from a parent key and an index.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Per-path Gaussian stream keyed by (master seed, path index, purpose).
/// The stream depends on nothing else, so scheduling paths on different
/// workers cannot change the draws.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path_index, StreamKind kind)
      : engine_(derive_seed(derive_seed(seed, path_index),
                            static_cast<std::uint64_t>(kind))) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  void fill_normal(Vec& out, double scale = 1.0) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = scale * normal_(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace divker
