#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "beliefid/pomdp.hpp"
#include "beliefid/solver.hpp"

namespace beliefid {

/// Smallest admissible observation likelihood; anything at or below is treated as impossible.
inline constexpr double kImpossibleObservation = 1e-300;

/// Joint belief over (s, z) together with its state marginal and the
/// conditional noise belief b(z|s).
struct FactoredBelief {
  std::size_t states = 0;
  std::size_t noises = 0;
  std::vector<double> joint;              // [s][z]
  std::vector<double> state_marginal;     // [s]
  std::vector<double> noise_conditional;  // [s][z]
  /// Rows whose state marginal is zero; their conditional is uniform by convention.
  std::vector<bool> zero_marginal;

  double at(std::size_t s, std::size_t z) const noexcept { return joint[s * noises + z]; }
};

FactoredBelief factorize_belief(std::span<const double> joint, std::size_t states, std::size_t noises);

/// The POMDP's initial belief in factored form.
FactoredBelief initial_belief(const FactoredPOMDP& p);

/// Predictive joint over (s', z') after taking `action` from `b`.
std::vector<double> predict(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action);

struct BeliefUpdate {
  FactoredBelief belief;
  /// p(o | a, b): the normalizer of the posterior.
  double observation_probability = 0.0;
};

/// Exact filter step: predict through the latent dynamics, then condition on `observation`.
/// Throws ZeroProbabilityObservation when the observation cannot occur.
BeliefUpdate belief_update(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action,
                           std::size_t observation);

/// sum_{s,s'} R(s, a, s') b(s) b_next(s'); reads only the state marginals.
double belief_reward(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action,
                     const FactoredBelief& next);

struct BeliefEdge {
  std::size_t observation = 0;
  std::size_t next = 0;
  double probability = 0.0;
  double reward = 0.0;
};

struct BeliefNode {
  FactoredBelief belief;
  std::size_t depth = 0;
  /// Expansion stopped at the horizon cap; edges are a zero-reward self-loop.
  bool truncated = false;
  std::vector<std::vector<BeliefEdge>> edges;  // per action
};

struct BeliefMDP {
  std::vector<BeliefNode> nodes;
  std::size_t initial = 0;
  std::size_t states = 0;
  std::size_t noises = 0;
  std::size_t actions = 0;
  std::size_t observations = 0;
  double discount = 0.9;
  double quantization = 1e-6;
  std::size_t horizon_cap = 0;
  /// gamma^cap * Rmax / (1 - gamma): worst-case effect of truncation on values.
  double truncation_bound = 0.0;

  std::size_t truncated_count() const noexcept;
};

struct BeliefMdpOptions {
  std::size_t horizon_cap = 10;
  double quantization = 1e-6;
  std::size_t node_limit = 100'000;
};

/// Quantized key of a joint belief: each entry rounded to the nearest multiple of q.
std::string belief_key(std::span<const double> joint, double quantization);

/// Breadth-first expansion of the beliefs reachable from the initial belief.
BeliefMDP build_belief_mdp(const FactoredPOMDP& p, const BeliefMdpOptions& options);

/// Optimal values of the quantized belief MDP (one per node).
ValueFunction belief_value(const BeliefMDP& bmdp, double tol = kBellmanTolerance);

/// Structured-text graph document: nodes with belief vectors, edges with probabilities.
void write_belief_graph_json(std::ostream& out, const BeliefMDP& bmdp);

}  // namespace beliefid
