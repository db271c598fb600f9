#pragma once

// Counter-based random streams.
//
// Every particle of a branching tree draws from its own stream, keyed by a
// 64-bit value derived from the sample key and the particle's label. Streams
// are therefore independent of traversal order, thread layout and of how
// many other particles were simulated before.

#include <array>
#include <cstdint>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace branchdiff {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Order-sensitive combination of two keys.
constexpr std::uint64_t combine_keys(std::uint64_t parent, std::uint64_t child) noexcept {
  return mix64(parent ^ mix64(child + 0x632BE59BD9B4E019ULL));
}

/// Role of a stream drawn from a particle key. Skeleton and diffusion draws
/// of one particle never share a counter range.
enum class StreamPurpose : std::uint64_t {
  skeleton = 1,
  diffusion = 2,
  selection = 3,
  auxiliary = 4,
};

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// UniformRandomBitGenerator over Philox4x32-10 with a 64-bit key, a 64-bit
/// stream id (upper counter half) and a 64-bit block counter (lower half).
class PhiloxEngine {
 public:
  using result_type = std::uint64_t;

  PhiloxEngine(std::uint64_t key, std::uint64_t stream) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (index_ == 2) refill();
    return buffer_[index_++];
  }

 private:
  void refill() noexcept;

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int index_ = 2;
};

/// A reproducible source of the variates the simulation needs.
class RandomStream {
 public:
  RandomStream(std::uint64_t key, StreamPurpose purpose) noexcept
      : engine_(key, static_cast<std::uint64_t>(purpose)) {}

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }

  void fill_normal(Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_(engine_);
  }

  /// Gamma(shape, 1) variate.
  double gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(engine_);
  }

  PhiloxEngine& engine() noexcept { return engine_; }

 private:
  PhiloxEngine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Key identifying one Monte Carlo sample (one tree, or one interacting ensemble).
struct SampleKey {
  std::uint64_t value = 0;
};

}  // namespace branchdiff
