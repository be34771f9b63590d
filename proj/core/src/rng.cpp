#include "beliefid/rng.hpp"

#include <cmath>

namespace beliefid {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream) noexcept
    : key_(mix64(mix64(seed) ^ mix64(static_cast<std::uint64_t>(stream) * 0x632be59bd9b4e019ULL) ^
                 mix64(substream + 0x2545f4914f6cdd1dULL))) {}

std::uint64_t CounterRng::next() noexcept {
  return mix64(key_ ^ mix64(counter_++));
}

double CounterRng::uniform() noexcept {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double lo, double hi) noexcept {
  return lo + (hi - lo) * uniform();
}

std::size_t CounterRng::below(std::size_t n) noexcept {
  if (n <= 1) {
    return 0;
  }
  // Rejection keeps the result exactly uniform.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = next();
  while (x >= limit) {
    x = next();
  }
  return static_cast<std::size_t>(x % bound);
}

std::size_t CounterRng::categorical(std::span<const double> weights) noexcept {
  double total = 0.0;
  for (double w : weights) {
    total += w;
  }
  const double target = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) {
      continue;
    }
    acc += weights[i];
    last_positive = i;
    if (target < acc) {
      return i;
    }
  }
  return last_positive;
}

std::vector<double> CounterRng::dirichlet_one(std::size_t n) {
  std::vector<double> out(n);
  double total = 0.0;
  for (auto& x : out) {
    // 1 - u lies in (0, 1], so the log is finite.
    x = -std::log1p(-uniform());
    total += x;
  }
  if (total <= 0.0) {
    for (auto& x : out) {
      x = 1.0 / static_cast<double>(n);
    }
    return out;
  }
  for (auto& x : out) {
    x /= total;
  }
  return out;
}

}  // namespace beliefid
