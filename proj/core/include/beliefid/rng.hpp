#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace beliefid {

/// Named random streams. Every consumer of randomness draws from its own
/// stream so results do not depend on call order across subsystems.
enum class Stream : std::uint64_t {
  kFixture = 1,
  kGenerator = 2,
  kRewards = 3,
  kEpisode = 4,
  kModelInit = 5,
  kPolicySearch = 6,
  kTrainingData = 7,
  kEvaluation = 8,
  kProbe = 9,
};

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based generator: output i is a pure function of (seed, stream, i).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0) noexcept;

  std::uint64_t next() noexcept;
  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) noexcept;
  /// Draws an index from an (unnormalized, nonnegative) weight vector.
  std::size_t categorical(std::span<const double> weights) noexcept;
  /// Sample from the symmetric Dirichlet(1) distribution of dimension n.
  std::vector<double> dirichlet_one(std::size_t n);

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace beliefid
