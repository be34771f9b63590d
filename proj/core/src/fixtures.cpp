#include <algorithm>

#include "beliefid/error.hpp"
#include "beliefid/pomdp.hpp"
#include "beliefid/rng.hpp"

namespace beliefid {

FixtureName fixture_from(std::string_view name) {
  if (name == "TB1") return FixtureName::kTB1;
  if (name == "TB2") return FixtureName::kTB2;
  if (name == "GRIDNOISE") return FixtureName::kGridNoise;
  throw InvalidArgument("unknown fixture '" + std::string(name) + "' (expected TB1, TB2 or GRIDNOISE)");
}

std::string_view to_string(FixtureName name) noexcept {
  switch (name) {
    case FixtureName::kTB1:
      return "TB1";
    case FixtureName::kTB2:
      return "TB2";
    case FixtureName::kGridNoise:
      return "GRIDNOISE";
  }
  return "?";
}

namespace {

constexpr std::size_t kStay = 0;
constexpr std::size_t kFlip = 1;

// Two states, stay/flip actions, reward 1 for landing in s1.
void two_state_dynamics(FactoredPOMDP& p) {
  p.sizes.states = 2;
  p.sizes.actions = 2;
  p.state_transition.assign(2 * 2 * 2, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    p.state_transition[(kStay * 2 + s) * 2 + s] = 1.0;
    p.state_transition[(kFlip * 2 + s) * 2 + (1 - s)] = 1.0;
  }
  p.reward.assign(2 * 2 * 2, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      p.reward[(s * 2 + a) * 2 + 1] = 1.0;
    }
  }
  p.reward_bound = 1.0;
  p.discount = 0.9;
}

FactoredPOMDP tb1() {
  FactoredPOMDP p;
  two_state_dynamics(p);
  p.sizes.noises = 2;
  p.sizes.observations = 4;
  p.noise_transition.decomposition_class = NoiseClass::kA;
  p.noise_transition.table = {0.8, 0.2, 0.2, 0.8};
  p.emission.assign(2 * 2 * 4, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t z = 0; z < 2; ++z) {
      p.emission[(s * 2 + z) * 4 + (2 * s + z)] = 1.0;
    }
  }
  p.invertible = true;
  p.initial_belief.assign(4, 0.25);
  p.channels = {2, 2};
  return p;
}

FactoredPOMDP tb2() {
  FactoredPOMDP p;
  two_state_dynamics(p);
  p.sizes.noises = 2;
  p.sizes.observations = 4;
  p.channels = {2, 2};
  p.invertible = false;

  // p(z' = z | a, z, s') is 0.9 when s' = s0 and 0.6 when s' = s1.
  p.noise_transition.decomposition_class = NoiseClass::kD;
  p.noise_transition.table.assign(NoiseTransition::row_count(NoiseClass::kD, p.sizes) * 2, 0.0);
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t z = 0; z < 2; ++z) {
      for (std::size_t next_s = 0; next_s < 2; ++next_s) {
        const double keep = next_s == 0 ? 0.9 : 0.6;
        const auto row = NoiseTransition::row_index(NoiseClass::kD, p.sizes, a, 0, z, next_s);
        p.noise_transition.table[row * 2 + z] = keep;
        p.noise_transition.table[row * 2 + (1 - z)] = 1.0 - keep;
      }
    }
  }

  // Channel 1 reports s, channel 2 reports z; each flips independently w.p. 0.1.
  p.emission.assign(2 * 2 * 4, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t z = 0; z < 2; ++z) {
      for (std::size_t c1 = 0; c1 < 2; ++c1) {
        for (std::size_t c2 = 0; c2 < 2; ++c2) {
          const double p1 = c1 == s ? 0.9 : 0.1;
          const double p2 = c2 == z ? 0.9 : 0.1;
          p.emission[(s * 2 + z) * 4 + (c1 * 2 + c2)] = p1 * p2;
        }
      }
    }
  }
  p.initial_belief.assign(4, 0.25);
  return p;
}

FactoredPOMDP gridnoise(std::uint64_t seed) {
  constexpr std::size_t kCells = 4;
  constexpr std::size_t kDistractors = 3;
  constexpr std::size_t kLeft = 0;
  constexpr std::size_t kRight = 1;
  constexpr double kSuccess = 0.9;

  FactoredPOMDP p;
  p.sizes = {kCells, kDistractors, 2, kCells * kDistractors};
  p.channels = {kCells, kDistractors};
  p.discount = 0.9;
  p.reward_bound = 1.0;

  p.state_transition.assign(2 * kCells * kCells, 0.0);
  for (std::size_t s = 0; s < kCells; ++s) {
    const std::size_t left = s == 0 ? 0 : s - 1;
    const std::size_t right = std::min(s + 1, kCells - 1);
    p.state_transition[(kLeft * kCells + s) * kCells + left] += kSuccess;
    p.state_transition[(kLeft * kCells + s) * kCells + s] += 1.0 - kSuccess;
    p.state_transition[(kRight * kCells + s) * kCells + right] += kSuccess;
    p.state_transition[(kRight * kCells + s) * kCells + s] += 1.0 - kSuccess;
  }

  p.reward.assign(kCells * 2 * kCells, 0.0);
  for (std::size_t s = 0; s < kCells; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      p.reward[(s * 2 + a) * kCells + (kCells - 1)] = 1.0;
    }
  }

  CounterRng rng(seed, Stream::kFixture);
  p.noise_transition.decomposition_class = NoiseClass::kA;
  p.noise_transition.table.clear();
  for (std::size_t z = 0; z < kDistractors; ++z) {
    const auto row = rng.dirichlet_one(kDistractors);
    p.noise_transition.table.insert(p.noise_transition.table.end(), row.begin(), row.end());
  }

  p.emission.assign(kCells * kDistractors * p.sizes.observations, 0.0);
  for (std::size_t s = 0; s < kCells; ++s) {
    for (std::size_t z = 0; z < kDistractors; ++z) {
      p.emission[(s * kDistractors + z) * p.sizes.observations + (s * kDistractors + z)] = 1.0;
    }
  }
  p.invertible = true;

  // Start in the leftmost cell with an unknown distractor.
  p.initial_belief.assign(kCells * kDistractors, 0.0);
  for (std::size_t z = 0; z < kDistractors; ++z) {
    p.initial_belief[z] = 1.0 / static_cast<double>(kDistractors);
  }
  return p;
}

}  // namespace

FactoredPOMDP make_fixture(FixtureName name, std::uint64_t seed) {
  switch (name) {
    case FixtureName::kTB1:
      return tb1();
    case FixtureName::kTB2:
      return tb2();
    case FixtureName::kGridNoise:
      return gridnoise(seed);
  }
  throw InvalidArgument("unknown fixture");
}

FactoredPOMDP make_fixture(std::string_view name, std::uint64_t seed) {
  return make_fixture(fixture_from(name), seed);
}

FactoredPOMDP make_noiseless_tb1() {
  FactoredPOMDP p;
  two_state_dynamics(p);
  p.sizes.noises = 1;
  p.sizes.observations = 2;
  p.noise_transition.decomposition_class = NoiseClass::kA;
  p.noise_transition.table = {1.0};
  p.emission = {1.0, 0.0, 0.0, 1.0};
  p.invertible = true;
  p.initial_belief = {0.5, 0.5};
  p.channels = {2, 1};
  return p;
}

}  // namespace beliefid
