#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace velvet {

/// SplitMix64 finalizer; used to derive independent stream seeds from a run seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream_name);

/// Deterministic random stream with platform-independent draws.
///
/// The standard distributions are implementation-defined, so draws are built
/// directly from the engine output. The engine state round-trips through
/// `serialize` / `deserialize` for checkpointing.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : engine_(mix_seed(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  /// Normal(0, stddev) resampled until |x| <= 2 stddev.
  double truncated_normal(double stddev);

  /// Draws k distinct indices from [0, n) in draw order.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);
  std::vector<std::int64_t> permutation(std::int64_t n);
  /// Index drawn with probability proportional to weights (non-negative).
  std::int64_t categorical(const std::vector<double>& weights);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace velvet
