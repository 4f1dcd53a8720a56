#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fluvinv {

/// SplitMix64 finalizer, used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the stream identified by (seed, keys...). Keys are typically a
/// purpose tag plus a sample/chain index, which makes draws independent of
/// how work is split across threads.
std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys)
      : engine_(stream_seed(seed, keys)) {}

  double normal() { return normal_(engine_); }
  /// Uniform in [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::int64_t index(std::int64_t n);

  std::vector<double> normal_vector(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Purpose tags for stream_seed so different consumers of one master seed
/// never share a stream.
namespace stream {
inline constexpr std::uint64_t prior = 1;
inline constexpr std::uint64_t truth = 2;
inline constexpr std::uint64_t wells = 3;
inline constexpr std::uint64_t weights = 4;
inline constexpr std::uint64_t latent_opt = 5;
inline constexpr std::uint64_t inference_net = 6;
inline constexpr std::uint64_t flow = 7;
inline constexpr std::uint64_t dream = 8;
inline constexpr std::uint64_t tuning = 9;
inline constexpr std::uint64_t swd = 10;
inline constexpr std::uint64_t noise = 11;
}  // namespace stream

}  // namespace fluvinv
