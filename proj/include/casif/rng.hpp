#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace casif {

// Random number generation.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, so streams are reproducible across compilers and platforms. The
// standard distributions are not, so the derived draws are implemented here:
//
//   uniform01     (x >> 11) * 2^-53, a double in [0, 1)
//   below(n)      Lemire's multiply-shift with rejection, unbiased in [0, n)
//   gaussian      Box-Muller on two uniform01 draws, 1 - u1 used to avoid log(0);
//                 both outputs are used (cos branch first, then sin)
//   shuffle       Fisher-Yates from the back, j = below(i + 1)
//
// Independent streams are obtained by seeding the engine with
// splitmix64(seed ^ splitmix64(stream_tag)).

/// One step of the SplitMix64 mixer.
std::uint64_t splitmix64(std::uint64_t x);

enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kSynth = 3,
  kGradcheck = 4,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0);

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t range(std::int64_t lo, std::int64_t hi);
  double gaussian(double mean, double stddev);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace casif
