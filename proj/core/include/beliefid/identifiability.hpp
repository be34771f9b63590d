#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beliefid/belief.hpp"
#include "beliefid/pomdp.hpp"
#include "beliefid/solver.hpp"

namespace beliefid {

/// Observation-level state estimator g: O -> S_hat x Z_hat.
struct ObservationEstimator {
  std::size_t state_codes = 0;
  std::size_t noise_codes = 0;
  std::vector<std::size_t> state_code;  // per observation
  std::vector<std::size_t> noise_code;  // per observation

  std::size_t observations() const noexcept { return state_code.size(); }
  bool is_bijection() const;
  /// Composes the estimator with relabelings of S_hat and Z_hat:
  /// new_state = state_perm[old_state], new_noise = noise_perm[old_noise].
  ObservationEstimator relabeled(std::span<const std::size_t> state_perm,
                                 std::span<const std::size_t> noise_perm) const;
};

/// g(o) = (s, z) through the inverse emission.
ObservationEstimator estimator_identity(const FactoredPOMDP& p);
/// g(o) = (z, s): keeps the noise as the "state".
ObservationEstimator estimator_swap(const FactoredPOMDP& p);
/// g(o) = ((s + z) mod |S|, z): mixes the noise into the state code.
ObservationEstimator estimator_xor(const FactoredPOMDP& p);

struct Tolerances {
  double transition = 1e-9;
  double reward = 1e-9;
  double ci = 1e-9;
  double witness = 1e-9;
  std::size_t redundancy_policies = 64;
  std::uint64_t seed = 0;
};

/// Which transition condition a certificate enforces.
enum class TransitionCondition {
  /// p(o'|a,o) = p(s_hat'|a,s_hat) p(z_hat'|z_hat)
  kProductForm,
  /// z_hat independent of s_hat' given (s_hat, a); noise kernel unrestricted.
  kConditionalIndependence,
};

struct TransitionCheck {
  double residual = 0.0;
  std::vector<double> state_kernel;  // [a][s_hat][s_hat']
  std::vector<double> noise_kernel;  // [z_hat][z_hat']
};

/// Fits p(s_hat'|a,s_hat) and p(z_hat'|z_hat) by marginalizing the true observation
/// kernel through g and returns the largest total-variation gap to the product form.
/// Requires an invertible emission.
TransitionCheck check_transition_preservation(const FactoredPOMDP& p, const ObservationEstimator& g);

struct RewardCheck {
  double residual = 0.0;
  /// R_hat[s_hat][a][s_hat'] as group means; present when residual <= tol.
  std::optional<std::vector<double>> latent_reward;
  std::vector<double> group_mean;
};

RewardCheck check_reward_preservation(const FactoredPOMDP& p, const ObservationEstimator& g,
                                      double tol = 1e-9);

/// R(o, a, o') = R(s(o), a, s(o')) through the inverse emission, as [o][a][o'].
std::vector<double> observation_reward_table(const FactoredPOMDP& p);

/// Same check on an explicit observation-level reward table [o][a][o'].
RewardCheck check_reward_preservation(std::span<const double> observation_reward, std::size_t actions,
                                      const ObservationEstimator& g, double tol = 1e-9);

struct ConditionalIndependenceCheck {
  /// max TV between p(s_hat'|a,o) and the pooled p(s_hat'|a,s_hat).
  double ci_residual = 0.0;
  /// Fit residual of the induced noise kernel for each class A..E.
  std::array<double, 5> class_residual{};
  /// Classes fitting within tolerance, most restrictive first.
  std::vector<NoiseClass> fitting;
  std::optional<NoiseClass> best;
  std::optional<bool> hint_fits;
};

ConditionalIndependenceCheck check_conditional_independence(const FactoredPOMDP& p,
                                                            const ObservationEstimator& g,
                                                            std::optional<NoiseClass> class_hint,
                                                            double tol = 1e-9);

struct ValueEquivalence {
  double gap = std::numeric_limits<double>::infinity();
  /// f: S_hat -> S realizing the gap, kept only when gap <= tolerance.
  std::optional<std::vector<std::size_t>> witness;
};

/// Exhaustive search (|S| <= 8) over bijections between the state sets of two MDPs
/// minimizing the largest transition/reward deviation.
ValueEquivalence find_witness_bijection(const MDP& estimated, const MDP& truth, double tol);

enum class Verdict { kCertified, kRefuted, kInconclusive };
std::string_view to_string(Verdict v) noexcept;

struct CertificationReport {
  TransitionCondition condition = TransitionCondition::kProductForm;
  std::size_t state_codes = 0;
  std::size_t noise_codes = 0;
  double transition_residual = 0.0;
  double reward_residual = 0.0;
  double ci_residual = 0.0;
  std::size_t distinct_pairs = 0;
  std::size_t redundant_pairs = 0;
  std::size_t undetermined_pairs = 0;
  /// The estimated MDP (S_hat, A, p(s_hat'|a,s_hat), R_hat, gamma).
  MDP estimated;
  ValueEquivalence value_equivalence;
  Verdict verdict = Verdict::kRefuted;
  std::vector<std::string> reasons;
};

CertificationReport certify_disentanglement(
    const FactoredPOMDP& p, const ObservationEstimator& g, const Tolerances& tol = {},
    TransitionCondition condition = TransitionCondition::kProductForm);

/// Same as above with a precomputed redundancy analysis of the underlying MDP.
CertificationReport certify_disentanglement(const FactoredPOMDP& p, const ObservationEstimator& g,
                                            const RedundancyReport& redundancy, const Tolerances& tol,
                                            TransitionCondition condition);

struct CertifiedEstimator {
  ObservationEstimator estimator;
  CertificationReport report;
};

struct FactorPairSummary {
  std::size_t state_codes = 0;
  std::size_t noise_codes = 0;
  std::size_t candidates = 0;
  std::size_t certified = 0;
  /// Why the pair produced no certificate (empty when it did).
  std::string note;
};

struct SearchResult {
  std::vector<CertifiedEstimator> certified;
  std::vector<FactorPairSummary> pairs;
};

inline constexpr std::size_t kMaxSearchObservations = 12;

/// Enumerates estimators for every factor-size pair with product |O| (up to relabeling
/// of S_hat and Z_hat) and returns the certified ones.
SearchResult search_estimators(const FactoredPOMDP& p, TransitionCondition condition,
                               const Tolerances& tol = {});

/// Belief-level factorizer: a (state key, noise key) pair per belief-MDP node.
struct BeliefFactorizer {
  std::vector<std::size_t> state_key;
  std::vector<std::size_t> noise_key;
};

/// Keys from the quantized state marginal and conditional noise belief of each node.
BeliefFactorizer factorizer_ground_truth(const BeliefMDP& bmdp);
/// The ground-truth keys with the two roles exchanged.
BeliefFactorizer factorizer_swapped(const BeliefMDP& bmdp);

struct BeliefPreservationCheck {
  double residual = 0.0;
  std::size_t state_key_count = 0;
  std::size_t noise_key_count = 0;
};

/// Compares, per (node, action), the distribution over next (state key, noise key) with
/// p(k_s'|a,k_s) p(k_z'|k_z,k_s'), each factor pooled over all nodes sharing its
/// conditioning keys. Returns the largest total-variation gap.
BeliefPreservationCheck check_belief_preservation(const BeliefMDP& bmdp, const BeliefFactorizer& keys);

void write_certification_json(std::ostream& out, const CertificationReport& report);
std::string certification_json(const CertificationReport& report);

}  // namespace beliefid
