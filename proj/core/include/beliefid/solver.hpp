#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "beliefid/pomdp.hpp"

namespace beliefid {

inline constexpr double kBellmanTolerance = 1e-9;
inline constexpr double kValueDistinctness = 1e-6;

struct ValueFunction {
  std::vector<double> values;
  /// max_s |(T V)(s) - V(s)| for the returned V.
  double residual = 0.0;
};

/// Throws InvalidModel if any transition row is not stochastic or tables are mis-sized.
void require_valid(const MDP& mdp);

ValueFunction policy_evaluation(const MDP& mdp, const StatePolicy& policy,
                                double tol = kBellmanTolerance);

struct OptimalSolution {
  ValueFunction value;
  /// Greedy with respect to value; ties go to the lowest action index.
  DeterministicPolicy policy;
};

OptimalSolution value_iteration(const MDP& mdp, double tol = kBellmanTolerance);

/// Greedy action per state for a given value function.
DeterministicPolicy greedy_policy(const MDP& mdp, const std::vector<double>& values);

struct Partition {
  std::vector<std::size_t> block;  // block id per state
  std::size_t block_count = 0;
};

/// Coarsest partition whose blocks agree (within eps) on expected reward and
/// on the probability of moving into each block, for every action.
Partition bisimulation_partition(const MDP& mdp, double eps);

enum class PairVerdict { kDistinct, kRedundant, kUndetermined };

struct StatePair {
  std::size_t first = 0;
  std::size_t second = 0;
  PairVerdict verdict = PairVerdict::kUndetermined;
  /// Policy separating the pair when distinct.
  std::optional<DeterministicPolicy> witness;
  double value_gap = 0.0;
};

struct RedundancyReport {
  std::vector<StatePair> pairs;
  std::size_t policies_tested = 0;
  bool exhaustive = false;

  std::size_t count(PairVerdict v) const noexcept;
  bool all_distinct() const noexcept { return count(PairVerdict::kDistinct) == pairs.size(); }
};

/// Three-valued no-redundancy analysis: distinct pairs carry a separating
/// policy, bisimilar pairs are redundant, anything else is undetermined.
RedundancyReport no_redundancy_check(const MDP& mdp, std::size_t n_policies, std::uint64_t seed);

/// "state,value" rows.
void write_value_csv(std::ostream& out, const ValueFunction& v);

}  // namespace beliefid
