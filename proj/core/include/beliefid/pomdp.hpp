#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace beliefid {

/// Row-stochastic tables are checked against this tolerance.
inline constexpr double kStochasticTolerance = 1e-12;

struct Sizes {
  std::size_t states = 0;
  std::size_t noises = 0;
  std::size_t actions = 0;
  std::size_t observations = 0;

  friend bool operator==(const Sizes&, const Sizes&) = default;
};

/// The five admissible factorizations of the noise transition given that
/// the future state does not depend on the current noise:
///   A: p(z'|z)   B: p(z'|a,z)   C: p(z'|a,z,s)   D: p(z'|a,z,s')   E: p(z'|a,z,s,s')
enum class NoiseClass { kA, kB, kC, kD, kE };

inline constexpr NoiseClass kAllNoiseClasses[] = {NoiseClass::kA, NoiseClass::kB, NoiseClass::kC,
                                                  NoiseClass::kD, NoiseClass::kE};

char to_char(NoiseClass c) noexcept;
NoiseClass noise_class_from(std::string_view name);
/// True when every kernel of class `narrow` is also a kernel of class `wide`.
bool is_nested_in(NoiseClass narrow, NoiseClass wide) noexcept;

/// Noise kernel stored as rows over z'. Row layout by class:
///   A: [z]  B: [a][z]  C: [a][z][s]  D: [a][z][s']  E: [a][z][s][s']
struct NoiseTransition {
  NoiseClass decomposition_class = NoiseClass::kA;
  std::vector<double> table;

  static std::size_t row_count(NoiseClass c, const Sizes& sizes) noexcept;
  static std::size_t row_index(NoiseClass c, const Sizes& sizes, std::size_t action, std::size_t state,
                               std::size_t noise, std::size_t next_state) noexcept;
};

/// How an observation splits into a state-relevant symbol and a distractor
/// symbol: o = first * second_size + second.
struct ObservationChannels {
  std::size_t first = 1;
  std::size_t second = 1;

  friend bool operator==(const ObservationChannels&, const ObservationChannels&) = default;
};

/// Finite POMDP whose latent variable factors into state x noise.
/// Tables are flat, row-major, with the last index varying fastest.
struct FactoredPOMDP {
  Sizes sizes;
  std::vector<double> state_transition;  // [a][s][s']
  NoiseTransition noise_transition;
  std::vector<double> emission;  // [s][z][o]
  bool invertible = false;
  std::vector<double> reward;  // [s][a][s']
  double reward_bound = 1.0;
  double discount = 0.9;
  std::vector<double> initial_belief;  // [s][z]
  ObservationChannels channels;

  std::size_t joint_index(std::size_t s, std::size_t z) const noexcept { return s * sizes.noises + z; }
  std::size_t joint_count() const noexcept { return sizes.states * sizes.noises; }

  double transition(std::size_t a, std::size_t s, std::size_t next_s) const noexcept {
    return state_transition[(a * sizes.states + s) * sizes.states + next_s];
  }
  double noise(std::size_t a, std::size_t s, std::size_t z, std::size_t next_s,
               std::size_t next_z) const noexcept {
    const auto row =
        NoiseTransition::row_index(noise_transition.decomposition_class, sizes, a, s, z, next_s);
    return noise_transition.table[row * sizes.noises + next_z];
  }
  double emit(std::size_t s, std::size_t z, std::size_t o) const noexcept {
    return emission[(s * sizes.noises + z) * sizes.observations + o];
  }
  double reward_of(std::size_t s, std::size_t a, std::size_t next_s) const noexcept {
    return reward[(s * sizes.actions + a) * sizes.states + next_s];
  }
  /// p(s', z' | a, s, z)
  double latent_transition(std::size_t a, std::size_t s, std::size_t z, std::size_t next_s,
                           std::size_t next_z) const noexcept {
    return transition(a, s, next_s) * noise(a, s, z, next_s, next_z);
  }

  /// Most likely observation for (s, z); the emitted symbol when invertible.
  std::size_t observation_of(std::size_t s, std::size_t z) const noexcept;
  /// Inverse of the emission bijection, indexed by observation: joint (s,z) index.
  /// Requires `invertible`.
  std::vector<std::size_t> latent_of_observation() const;

  std::size_t first_channel(std::size_t o) const noexcept { return o / channels.second; }
  std::size_t second_channel(std::size_t o) const noexcept { return o % channels.second; }
};

/// Fully observable MDP (S, A, T, R, gamma).
struct MDP {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<double> transition;  // [a][s][s']
  std::vector<double> reward;      // [s][a][s']
  double discount = 0.9;

  double prob(std::size_t a, std::size_t s, std::size_t next_s) const noexcept {
    return transition[(a * states + s) * states + next_s];
  }
  double reward_of(std::size_t s, std::size_t a, std::size_t next_s) const noexcept {
    return reward[(s * actions + a) * states + next_s];
  }
  double expected_reward(std::size_t s, std::size_t a) const noexcept;
  double reward_bound() const noexcept;
};

struct DeterministicPolicy {
  std::vector<std::size_t> action;  // per state
};

struct StochasticPolicy {
  std::size_t actions = 0;
  std::vector<double> probs;  // [s][a]

  static StochasticPolicy uniform(std::size_t states, std::size_t actions);
  static StochasticPolicy from(const DeterministicPolicy& p, std::size_t actions);
};

/// Acts on the observation stream; holds its own history between calls.
class ObservationPolicy {
 public:
  virtual ~ObservationPolicy() = default;
  virtual void reset() = 0;
  virtual std::size_t act(std::size_t observation) = 0;
};

using StatePolicy = std::variant<DeterministicPolicy, StochasticPolicy>;
using Policy = std::variant<DeterministicPolicy, StochasticPolicy, std::shared_ptr<ObservationPolicy>>;

struct Step {
  std::size_t state = 0;
  std::size_t noise = 0;
  std::size_t observation = 0;
  std::size_t action = 0;
  double reward = 0.0;
};

/// Trajectory of `steps.size()` transitions. Step t holds (s_t, z_t, o_t, a_t, r_t)
/// with r_t = R(s_t, a_t, s_{t+1}); the final latent and its observation close the
/// sequence so every reward has a successor observation.
struct Episode {
  std::vector<Step> steps;
  std::size_t final_state = 0;
  std::size_t final_noise = 0;
  std::size_t final_observation = 0;
  std::uint64_t seed = 0;

  std::size_t horizon() const noexcept { return steps.size(); }
  std::size_t state_at(std::size_t t) const noexcept {
    return t < steps.size() ? steps[t].state : final_state;
  }
  std::size_t noise_at(std::size_t t) const noexcept {
    return t < steps.size() ? steps[t].noise : final_noise;
  }
  std::size_t observation_at(std::size_t t) const noexcept {
    return t < steps.size() ? steps[t].observation : final_observation;
  }
};

struct Violation {
  std::string rule;
  std::string location;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool valid() const noexcept { return violations.empty(); }
  std::string summary() const;
};

ValidationReport validate_pomdp(const FactoredPOMDP& p);
/// Throws InvalidModel with the report summary when `p` is not valid.
void require_valid(const FactoredPOMDP& p);

enum class FixtureName { kTB1, kTB2, kGridNoise };
FixtureName fixture_from(std::string_view name);
std::string_view to_string(FixtureName name) noexcept;

FactoredPOMDP make_fixture(FixtureName name, std::uint64_t seed = 0);
FactoredPOMDP make_fixture(std::string_view name, std::uint64_t seed = 0);

/// TB1 with the noise collapsed to a single symbol (the noiseless setting).
FactoredPOMDP make_noiseless_tb1();

struct GeneratorSpec {
  Sizes sizes;
  NoiseClass decomposition_class = NoiseClass::kA;
  bool invertible = false;
  std::uint64_t seed = 0;
  double discount = 0.9;
};

FactoredPOMDP generate_random(const GeneratorSpec& spec);

Episode sample_episode(const FactoredPOMDP& p, const Policy& policy, std::size_t horizon,
                       std::uint64_t seed,
                       std::optional<std::pair<std::size_t, std::size_t>> start = std::nullopt);

/// Seed for the i-th episode of a batch derived from a base seed.
std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) noexcept;

MDP underlying_mdp(const FactoredPOMDP& p);

}  // namespace beliefid
