#pragma once
// Brute-force reference computations. None of these call into the filtering,
// ELBO or solver code they are used to check.

#include <beliefid/identifiability.hpp>
#include <beliefid/learner.hpp>
#include <beliefid/pomdp.hpp>

#include <cstddef>
#include <span>
#include <vector>

namespace oracle {

using beliefid::Episode;
using beliefid::FactoredPOMDP;
using beliefid::LearnedWorldModel;

struct FilterAudit {
  double max_tv = 0.0;
  /// Largest relative gap between the product of filter normalizers and the path-sum likelihood.
  double max_chain_rel = 0.0;
  std::size_t histories = 0;
  std::size_t impossible = 0;
  /// Impossible histories where the filter did not throw ZeroProbabilityObservation.
  std::size_t missed_impossible = 0;
};

/// Visits every action/observation history up to `depth` steps. The reference
/// posterior sums explicit latent-path weights; the candidate is iterated belief_update.
FilterAudit audit_filter(const FactoredPOMDP& p, std::size_t depth);

/// Finite-horizon expectimax over exact beliefs, with the belief-space reward
/// sum R(s,a,s') b(s) b'(s'). Memoized on (steps left, belief rounded to 1e-12).
double expectimax(const FactoredPOMDP& p, std::size_t horizon);

/// log p(o_0..o_T | a_0..a_{T-1}) of the POMDP by summing over latent paths.
double pomdp_log_likelihood(const FactoredPOMDP& p, const Episode& ep);

struct PathElbo {
  double log_likelihood = 0.0;  // log p_model(o, r)
  double elbo = 0.0;            // E_q[log p(o, r, c) - log q(c)]
  double recon_o = 0.0;         // -E_q[log p(o | c)]
  double recon_r = 0.0;         // -E_q[log p(r | c)]
  double kl_s = 0.0;
  double kl_z = 0.0;
  /// q(c_t) per step, summed over code paths.
  std::vector<std::vector<double>> marginals;
};

/// Enumerates every code path of the learner for one episode (asymmetric or joint
/// decoders, KL(q||p) order). Use short episodes: cost is (K_s K_z)^(T+1).
PathElbo enumerate_code_paths(const LearnedWorldModel& m, const Episode& ep);

struct GradientAudit {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries = 0;
};

/// Central differences of elbo(...).total against elbo_gradients over every table entry.
/// Relative error is |g - fd| / max(|g|, |fd|, floor).
GradientAudit audit_gradients(const LearnedWorldModel& m, std::span<const Episode> episodes,
                              const beliefid::ObjectiveSwitches& switches, double h, double floor);

/// The TB1 world written directly as a learner: exact priors, point-mass posteriors
/// and decoders through o = 2 s + z, exact reward means. Logits of impossible entries are -inf.
LearnedWorldModel tb1_exact_model();

/// True when `g` equals the ground-truth factorization up to relabeling of both factors.
bool same_up_to_relabeling(const beliefid::ObservationEstimator& g, const beliefid::ObservationEstimator& truth);

/// sum p log(p / (p_x p_y)) written out directly.
double mi_closed_form(const std::vector<std::vector<double>>& counts);

}  // namespace oracle
