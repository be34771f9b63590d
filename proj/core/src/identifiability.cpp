#include "beliefid/identifiability.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "beliefid/error.hpp"
#include "beliefid/format.hpp"
#include "json.hpp"

namespace beliefid {

namespace {

constexpr std::size_t kMaxWitnessStates = 8;

double total_variation(std::span<const double> x, std::span<const double> y) {
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d += std::abs(x[i] - y[i]);
  }
  return 0.5 * d;
}

void require_estimator(const FactoredPOMDP& p, const ObservationEstimator& g) {
  if (g.state_code.size() != p.sizes.observations || g.noise_code.size() != p.sizes.observations) {
    throw InvalidArgument("estimator covers " + std::to_string(g.state_code.size()) +
                          " observations, POMDP has " + std::to_string(p.sizes.observations));
  }
  if (g.state_codes == 0 || g.noise_codes == 0) {
    throw InvalidArgument("estimator code counts must be positive");
  }
  for (std::size_t o = 0; o < g.observations(); ++o) {
    if (g.state_code[o] >= g.state_codes || g.noise_code[o] >= g.noise_codes) {
      throw InvalidArgument("estimator code out of range at observation " + std::to_string(o));
    }
  }
}

void require_invertible(const FactoredPOMDP& p, std::string_view who) {
  if (!p.invertible) {
    throw InvalidArgument(std::string(who) +
                          ": emission is not invertible; use the belief-level check "
                          "(check_belief_preservation) instead");
  }
}

// True observation kernel pushed through g: [a][o][s_hat'][z_hat'].
struct CodeKernel {
  std::size_t actions, observations, state_codes, noise_codes;
  std::vector<double> table;

  const double* row(std::size_t a, std::size_t o) const {
    return table.data() + (a * observations + o) * state_codes * noise_codes;
  }
  double state_mass(std::size_t a, std::size_t o, std::size_t ns) const {
    const double* r = row(a, o) + ns * noise_codes;
    return std::accumulate(r, r + noise_codes, 0.0);
  }
};

CodeKernel code_kernel(const FactoredPOMDP& p, const ObservationEstimator& g) {
  const auto latent = p.latent_of_observation();
  const auto Z = p.sizes.noises;
  const auto O = p.sizes.observations;
  CodeKernel k{p.sizes.actions, O, g.state_codes, g.noise_codes, {}};
  k.table.assign(k.actions * O * k.state_codes * k.noise_codes, 0.0);
  for (std::size_t a = 0; a < k.actions; ++a) {
    for (std::size_t o = 0; o < O; ++o) {
      const auto s = latent[o] / Z;
      const auto z = latent[o] % Z;
      double* row = k.table.data() + (a * O + o) * k.state_codes * k.noise_codes;
      for (std::size_t next = 0; next < O; ++next) {
        const auto ns = latent[next] / Z;
        const auto nz = latent[next] % Z;
        const double pr = p.latent_transition(a, s, z, ns, nz);
        row[g.state_code[next] * k.noise_codes + g.noise_code[next]] += pr;
      }
    }
  }
  return k;
}

// p(s_hat'|a,s_hat): average of the induced state rows over each s_hat group.
std::vector<double> pooled_state_kernel(const CodeKernel& k, const ObservationEstimator& g) {
  const auto K = k.state_codes;
  std::vector<double> out(k.actions * K * K, 0.0);
  std::vector<double> count(K, 0.0);
  for (std::size_t o = 0; o < k.observations; ++o) {
    count[g.state_code[o]] += 1.0;
  }
  for (std::size_t a = 0; a < k.actions; ++a) {
    for (std::size_t o = 0; o < k.observations; ++o) {
      const auto sh = g.state_code[o];
      for (std::size_t ns = 0; ns < K; ++ns) {
        out[(a * K + sh) * K + ns] += k.state_mass(a, o, ns) / count[sh];
      }
    }
    for (std::size_t sh = 0; sh < K; ++sh) {
      if (count[sh] == 0.0) {
        for (std::size_t ns = 0; ns < K; ++ns) {
          out[(a * K + sh) * K + ns] = 1.0 / static_cast<double>(K);
        }
      }
    }
  }
  return out;
}

double state_factor_residual(const CodeKernel& k, const ObservationEstimator& g,
                             const std::vector<double>& state_kernel) {
  const auto K = k.state_codes;
  double residual = 0.0;
  std::vector<double> row(K);
  for (std::size_t a = 0; a < k.actions; ++a) {
    for (std::size_t o = 0; o < k.observations; ++o) {
      for (std::size_t ns = 0; ns < K; ++ns) {
        row[ns] = k.state_mass(a, o, ns);
      }
      const double* fit = state_kernel.data() + (a * K + g.state_code[o]) * K;
      residual = std::max(residual, total_variation(row, std::span<const double>(fit, K)));
    }
  }
  return residual;
}

RewardCheck reward_groups(std::span<const double> table, std::size_t A, std::size_t O,
                          const std::vector<std::size_t>& state_code, std::size_t state_codes, double tol) {
  const auto K = state_codes;
  std::vector<double> lo(K * A * K, std::numeric_limits<double>::infinity());
  std::vector<double> hi(K * A * K, -std::numeric_limits<double>::infinity());
  std::vector<double> sum(K * A * K, 0.0);
  std::vector<double> count(K * A * K, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t next = 0; next < O; ++next) {
        const double r = table[(o * A + a) * O + next];
        const auto key = (state_code[o] * A + a) * K + state_code[next];
        lo[key] = std::min(lo[key], r);
        hi[key] = std::max(hi[key], r);
        sum[key] += r;
        count[key] += 1.0;
      }
    }
  }
  RewardCheck out;
  out.group_mean.assign(K * A * K, 0.0);
  for (std::size_t key = 0; key < sum.size(); ++key) {
    if (count[key] > 0.0) {
      out.residual = std::max(out.residual, hi[key] - lo[key]);
      out.group_mean[key] = sum[key] / count[key];
    }
  }
  if (out.residual <= tol) {
    out.latent_reward = out.group_mean;
  }
  return out;
}

std::string format_residual(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

}  // namespace

bool ObservationEstimator::is_bijection() const {
  if (state_codes * noise_codes != observations()) {
    return false;
  }
  std::vector<bool> seen(state_codes * noise_codes, false);
  for (std::size_t o = 0; o < observations(); ++o) {
    const auto j = state_code[o] * noise_codes + noise_code[o];
    if (j >= seen.size() || seen[j]) {
      return false;
    }
    seen[j] = true;
  }
  return true;
}

ObservationEstimator ObservationEstimator::relabeled(std::span<const std::size_t> state_perm,
                                                     std::span<const std::size_t> noise_perm) const {
  if (state_perm.size() != state_codes || noise_perm.size() != noise_codes) {
    throw InvalidArgument("relabeling size does not match the code counts");
  }
  ObservationEstimator g = *this;
  for (std::size_t o = 0; o < observations(); ++o) {
    g.state_code[o] = state_perm[state_code[o]];
    g.noise_code[o] = noise_perm[noise_code[o]];
  }
  return g;
}

ObservationEstimator estimator_identity(const FactoredPOMDP& p) {
  const auto latent = p.latent_of_observation();
  ObservationEstimator g{p.sizes.states, p.sizes.noises, {}, {}};
  for (auto j : latent) {
    g.state_code.push_back(j / p.sizes.noises);
    g.noise_code.push_back(j % p.sizes.noises);
  }
  return g;
}

ObservationEstimator estimator_swap(const FactoredPOMDP& p) {
  const auto latent = p.latent_of_observation();
  ObservationEstimator g{p.sizes.noises, p.sizes.states, {}, {}};
  for (auto j : latent) {
    g.state_code.push_back(j % p.sizes.noises);
    g.noise_code.push_back(j / p.sizes.noises);
  }
  return g;
}

ObservationEstimator estimator_xor(const FactoredPOMDP& p) {
  const auto latent = p.latent_of_observation();
  ObservationEstimator g{p.sizes.states, p.sizes.noises, {}, {}};
  for (auto j : latent) {
    const auto s = j / p.sizes.noises;
    const auto z = j % p.sizes.noises;
    g.state_code.push_back((s + z) % p.sizes.states);
    g.noise_code.push_back(z);
  }
  return g;
}

TransitionCheck check_transition_preservation(const FactoredPOMDP& p, const ObservationEstimator& g) {
  require_invertible(p, "check_transition_preservation");
  require_estimator(p, g);
  const auto k = code_kernel(p, g);
  const auto Ks = g.state_codes;
  const auto Kz = g.noise_codes;

  TransitionCheck out;
  out.state_kernel = pooled_state_kernel(k, g);

  out.noise_kernel.assign(Kz * Kz, 0.0);
  std::vector<double> count(Kz, 0.0);
  for (std::size_t a = 0; a < k.actions; ++a) {
    for (std::size_t o = 0; o < k.observations; ++o) {
      const auto zh = g.noise_code[o];
      count[zh] += 1.0;
      const double* row = k.row(a, o);
      for (std::size_t ns = 0; ns < Ks; ++ns) {
        for (std::size_t nz = 0; nz < Kz; ++nz) {
          out.noise_kernel[zh * Kz + nz] += row[ns * Kz + nz];
        }
      }
    }
  }
  for (std::size_t zh = 0; zh < Kz; ++zh) {
    for (std::size_t nz = 0; nz < Kz; ++nz) {
      out.noise_kernel[zh * Kz + nz] =
          count[zh] > 0.0 ? out.noise_kernel[zh * Kz + nz] / count[zh] : 1.0 / static_cast<double>(Kz);
    }
  }

  std::vector<double> product(Ks * Kz);
  for (std::size_t a = 0; a < k.actions; ++a) {
    for (std::size_t o = 0; o < k.observations; ++o) {
      const double* ps = out.state_kernel.data() + (a * Ks + g.state_code[o]) * Ks;
      const double* pz = out.noise_kernel.data() + g.noise_code[o] * Kz;
      for (std::size_t ns = 0; ns < Ks; ++ns) {
        for (std::size_t nz = 0; nz < Kz; ++nz) {
          product[ns * Kz + nz] = ps[ns] * pz[nz];
        }
      }
      out.residual = std::max(
          out.residual, total_variation(std::span<const double>(k.row(a, o), Ks * Kz), product));
    }
  }
  return out;
}

std::vector<double> observation_reward_table(const FactoredPOMDP& p) {
  require_invertible(p, "observation_reward_table");
  const auto latent = p.latent_of_observation();
  const auto A = p.sizes.actions;
  const auto O = p.sizes.observations;
  const auto Z = p.sizes.noises;
  std::vector<double> table(O * A * O);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t next = 0; next < O; ++next) {
        table[(o * A + a) * O + next] = p.reward_of(latent[o] / Z, a, latent[next] / Z);
      }
    }
  }
  return table;
}

RewardCheck check_reward_preservation(const FactoredPOMDP& p, const ObservationEstimator& g, double tol) {
  require_invertible(p, "check_reward_preservation");
  require_estimator(p, g);
  return reward_groups(observation_reward_table(p), p.sizes.actions, p.sizes.observations, g.state_code,
                       g.state_codes, tol);
}

RewardCheck check_reward_preservation(std::span<const double> observation_reward, std::size_t actions,
                                      const ObservationEstimator& g, double tol) {
  const auto O = g.observations();
  if (observation_reward.size() != O * actions * O) {
    throw InvalidArgument("observation reward table has " + std::to_string(observation_reward.size()) +
                          " entries, expected " + std::to_string(O * actions * O));
  }
  for (std::size_t o = 0; o < O; ++o) {
    if (g.state_code[o] >= g.state_codes) {
      throw InvalidArgument("estimator code out of range at observation " + std::to_string(o));
    }
  }
  return reward_groups(observation_reward, actions, O, g.state_code, g.state_codes, tol);
}

ConditionalIndependenceCheck check_conditional_independence(const FactoredPOMDP& p,
                                                            const ObservationEstimator& g,
                                                            std::optional<NoiseClass> class_hint,
                                                            double tol) {
  require_invertible(p, "check_conditional_independence");
  require_estimator(p, g);
  const auto k = code_kernel(p, g);
  const auto A = k.actions;
  const auto Ks = g.state_codes;
  const auto Kz = g.noise_codes;

  ConditionalIndependenceCheck out;
  out.ci_residual = state_factor_residual(k, g, pooled_state_kernel(k, g));

  // Conditioning key of the noise kernel for each class.
  auto key_of = [&](NoiseClass c, std::size_t a, std::size_t o, std::size_t ns) -> std::size_t {
    const auto zh = g.noise_code[o];
    const auto sh = g.state_code[o];
    switch (c) {
      case NoiseClass::kA:
        return zh;
      case NoiseClass::kB:
        return a * Kz + zh;
      case NoiseClass::kC:
        return (a * Kz + zh) * Ks + sh;
      case NoiseClass::kD:
        return (a * Kz + zh) * Ks + ns;
      case NoiseClass::kE:
        return ((a * Kz + zh) * Ks + sh) * Ks + ns;
    }
    return 0;
  };
  const std::size_t key_space = A * Kz * Ks * Ks;

  for (auto c : kAllNoiseClasses) {
    std::vector<double> fit(key_space * Kz, 0.0);
    std::vector<double> weight(key_space, 0.0);
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t o = 0; o < k.observations; ++o) {
        const double* row = k.row(a, o);
        for (std::size_t ns = 0; ns < Ks; ++ns) {
          const double w = k.state_mass(a, o, ns);
          if (w <= 0.0) {
            continue;
          }
          const auto key = key_of(c, a, o, ns);
          weight[key] += w;
          for (std::size_t nz = 0; nz < Kz; ++nz) {
            fit[key * Kz + nz] += row[ns * Kz + nz];
          }
        }
      }
    }
    double residual = 0.0;
    std::vector<double> cond(Kz);
    std::vector<double> pooled(Kz);
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t o = 0; o < k.observations; ++o) {
        const double* row = k.row(a, o);
        for (std::size_t ns = 0; ns < Ks; ++ns) {
          const double w = k.state_mass(a, o, ns);
          if (w <= 0.0) {
            continue;
          }
          const auto key = key_of(c, a, o, ns);
          for (std::size_t nz = 0; nz < Kz; ++nz) {
            cond[nz] = row[ns * Kz + nz] / w;
            pooled[nz] = fit[key * Kz + nz] / weight[key];
          }
          residual = std::max(residual, total_variation(cond, pooled));
        }
      }
    }
    out.class_residual[static_cast<std::size_t>(c)] = residual;
    if (residual <= tol) {
      out.fitting.push_back(c);
    }
  }
  if (!out.fitting.empty()) {
    out.best = out.fitting.front();
  }
  if (class_hint) {
    out.hint_fits = out.class_residual[static_cast<std::size_t>(*class_hint)] <= tol;
  }
  return out;
}

ValueEquivalence find_witness_bijection(const MDP& est, const MDP& truth, double tol) {
  ValueEquivalence out;
  if (est.states != truth.states || est.actions != truth.actions) {
    return out;
  }
  const auto n = truth.states;
  const auto A = truth.actions;
  if (n > kMaxWitnessStates) {
    throw InvalidArgument("witness search is exhaustive only up to 8 states");
  }

  // Bottleneck distance between sorted rows is a lower bound for any matching.
  auto sorted_distance = [](std::vector<double> x, std::vector<double> y) {
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      d = std::max(d, std::abs(x[i] - y[i]));
    }
    return d;
  };
  std::vector<double> fingerprint(n * n, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t s = 0; s < n; ++s) {
      double d = 0.0;
      for (std::size_t a = 0; a < A; ++a) {
        std::vector<double> te(n), tt(n), re(n), rt(n);
        for (std::size_t k = 0; k < n; ++k) {
          te[k] = est.prob(a, e, k);
          tt[k] = truth.prob(a, s, k);
          re[k] = est.reward_of(e, a, k);
          rt[k] = truth.reward_of(s, a, k);
        }
        d = std::max({d, sorted_distance(te, tt), sorted_distance(re, rt)});
      }
      fingerprint[e * n + s] = d;
    }
  }

  std::vector<std::size_t> f(n, 0);
  std::vector<bool> used(n, false);
  std::vector<std::size_t> best_f;
  double best = std::numeric_limits<double>::infinity();

  // Largest deviation introduced by fixing f[k] given f[0..k-1].
  auto added_gap = [&](std::size_t k) {
    double d = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      for (std::size_t a = 0; a < A; ++a) {
        d = std::max({d, std::abs(est.prob(a, k, j) - truth.prob(a, f[k], f[j])),
                      std::abs(est.prob(a, j, k) - truth.prob(a, f[j], f[k])),
                      std::abs(est.reward_of(k, a, j) - truth.reward_of(f[k], a, f[j])),
                      std::abs(est.reward_of(j, a, k) - truth.reward_of(f[j], a, f[k]))});
      }
    }
    return d;
  };

  std::function<void(std::size_t, double)> dfs = [&](std::size_t k, double gap) {
    if (k == n) {
      if (gap < best) {
        best = gap;
        best_f = f;
      }
      return;
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (used[s] || std::max(gap, fingerprint[k * n + s]) >= best) {
        continue;
      }
      f[k] = s;
      const double g = std::max(gap, added_gap(k));
      if (g >= best) {
        continue;
      }
      used[s] = true;
      dfs(k + 1, g);
      used[s] = false;
    }
  };
  dfs(0, 0.0);

  out.gap = best;
  if (best <= tol) {
    out.witness = best_f;
  }
  return out;
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::kCertified:
      return "certified";
    case Verdict::kRefuted:
      return "refuted";
    case Verdict::kInconclusive:
      return "inconclusive";
  }
  return "?";
}

CertificationReport certify_disentanglement(const FactoredPOMDP& p, const ObservationEstimator& g,
                                            const Tolerances& tol, TransitionCondition condition) {
  require_invertible(p, "certify_disentanglement");
  const auto redundancy = no_redundancy_check(underlying_mdp(p), tol.redundancy_policies, tol.seed);
  return certify_disentanglement(p, g, redundancy, tol, condition);
}

CertificationReport certify_disentanglement(const FactoredPOMDP& p, const ObservationEstimator& g,
                                            const RedundancyReport& redundancy, const Tolerances& tol,
                                            TransitionCondition condition) {
  require_invertible(p, "certify_disentanglement");
  require_estimator(p, g);

  CertificationReport r;
  r.condition = condition;
  r.state_codes = g.state_codes;
  r.noise_codes = g.noise_codes;

  const auto transition = check_transition_preservation(p, g);
  const auto reward = check_reward_preservation(p, g, tol.reward);
  const auto ci = check_conditional_independence(p, g, std::nullopt, tol.ci);
  r.transition_residual = transition.residual;
  r.reward_residual = reward.residual;
  r.ci_residual = ci.ci_residual;
  r.distinct_pairs = redundancy.count(PairVerdict::kDistinct);
  r.redundant_pairs = redundancy.count(PairVerdict::kRedundant);
  r.undetermined_pairs = redundancy.count(PairVerdict::kUndetermined);

  r.estimated.states = g.state_codes;
  r.estimated.actions = p.sizes.actions;
  r.estimated.transition = transition.state_kernel;
  r.estimated.reward = reward.group_mean;
  r.estimated.discount = p.discount;

  if (condition == TransitionCondition::kProductForm) {
    if (r.transition_residual > tol.transition) {
      r.reasons.push_back("transition preservation residual " + format_residual(r.transition_residual) +
                          " exceeds tolerance");
    }
  } else if (r.ci_residual > tol.ci) {
    r.reasons.push_back("conditional-independence residual " + format_residual(r.ci_residual) +
                        " exceeds tolerance");
  }
  if (r.reward_residual > tol.reward) {
    r.reasons.push_back("reward preservation residual " + format_residual(r.reward_residual) +
                        " exceeds tolerance");
  }
  if (r.redundant_pairs > 0) {
    r.reasons.push_back("underlying MDP has " + std::to_string(r.redundant_pairs) +
                        " redundant state pair(s)");
  }
  if (g.state_codes != p.sizes.states) {
    r.reasons.push_back("estimated state count " + std::to_string(g.state_codes) +
                        " differs from true state count " + std::to_string(p.sizes.states) +
                        " (redundant or merged estimated states)");
  } else {
    r.value_equivalence = find_witness_bijection(r.estimated, underlying_mdp(p), tol.witness);
    if (!r.value_equivalence.witness) {
      r.reasons.push_back("no bijection onto the true states matches transitions and rewards (best gap " +
                          format_residual(r.value_equivalence.gap) + ")");
    }
  }

  if (!r.reasons.empty()) {
    r.verdict = Verdict::kRefuted;
  } else if (r.undetermined_pairs > 0) {
    r.verdict = Verdict::kInconclusive;
    r.reasons.push_back(std::to_string(r.undetermined_pairs) +
                        " state pair(s) neither separated by a tested policy nor bisimilar");
  } else {
    r.verdict = Verdict::kCertified;
  }
  return r;
}

SearchResult search_estimators(const FactoredPOMDP& p, TransitionCondition condition,
                               const Tolerances& tol) {
  require_invertible(p, "search_estimators");
  const auto O = p.sizes.observations;
  if (O > kMaxSearchObservations) {
    throw InvalidArgument("search_estimators: |O| = " + std::to_string(O) +
                          " is beyond the exhaustive regime (at most 12)");
  }
  const auto A = p.sizes.actions;
  const auto redundancy = no_redundancy_check(underlying_mdp(p), tol.redundancy_policies, tol.seed);
  const auto reward_table = observation_reward_table(p);

  // Observations may share s_hat only if they carry the same rewards as source and as target.
  auto reward_at = [&](std::size_t o, std::size_t a, std::size_t next) {
    return reward_table[(o * A + a) * O + next];
  };
  auto same_signature = [&](std::size_t x, std::size_t y) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t o = 0; o < O; ++o) {
        if (std::abs(reward_at(x, a, o) - reward_at(y, a, o)) > tol.reward ||
            std::abs(reward_at(o, a, x) - reward_at(o, a, y)) > tol.reward) {
          return false;
        }
      }
    }
    return true;
  };
  std::vector<std::size_t> signature(O, 0);
  std::vector<std::size_t> reps;
  for (std::size_t o = 0; o < O; ++o) {
    auto it = std::find_if(reps.begin(), reps.end(), [&](std::size_t r) { return same_signature(r, o); });
    if (it == reps.end()) {
      signature[o] = reps.size();
      reps.push_back(o);
    } else {
      signature[o] = signature[*it];
    }
  }

  SearchResult result;
  for (std::size_t Ks = 1; Ks <= O; ++Ks) {
    if (O % Ks != 0) {
      continue;
    }
    const auto Kz = O / Ks;
    FactorPairSummary summary{Ks, Kz, 0, 0, {}};
    std::size_t partitions = 0;
    std::string first_reason;

    ObservationEstimator g{Ks, Kz, std::vector<std::size_t>(O, 0), std::vector<std::size_t>(O, 0)};
    std::vector<std::vector<std::size_t>> blocks;
    std::vector<bool> assigned(O, false);

    auto visit_partition = [&]() {
      ++partitions;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (auto o : blocks[b]) {
          g.state_code[o] = b;
        }
      }
      // Labelings of z_hat up to global relabeling: block 0 fixed, others permuted.
      std::vector<std::vector<std::size_t>> perms(Ks);
      for (auto& perm : perms) {
        perm.resize(Kz);
        std::iota(perm.begin(), perm.end(), 0);
      }
      std::size_t labelings = 1;
      for (std::size_t b = 1; b < Ks; ++b) {
        for (std::size_t i = 2; i <= Kz; ++i) {
          labelings *= i;
        }
      }

      // Both the reward residual and the state-factor residual depend on s_hat alone.
      const auto reward = reward_groups(reward_table, A, O, g.state_code, Ks, tol.reward);
      if (reward.residual > tol.reward) {
        summary.candidates += labelings;
        if (first_reason.empty()) {
          first_reason = "reward preservation residual " + format_residual(reward.residual);
        }
        return;
      }
      while (true) {
        for (std::size_t b = 0; b < Ks; ++b) {
          for (std::size_t i = 0; i < Kz; ++i) {
            g.noise_code[blocks[b][i]] = perms[b][i];
          }
        }
        ++summary.candidates;
        auto report = certify_disentanglement(p, g, redundancy, tol, condition);
        if (report.verdict == Verdict::kCertified) {
          ++summary.certified;
          result.certified.push_back({g, std::move(report)});
        } else if (first_reason.empty() && !report.reasons.empty()) {
          first_reason = report.reasons.front();
        }
        // Odometer over the permutations of blocks 1..Ks-1.
        std::size_t b = 1;
        while (b < Ks && !std::next_permutation(perms[b].begin(), perms[b].end())) {
          ++b;
        }
        if (b >= Ks) {
          break;
        }
      }
    };

    // Set partitions into blocks of size Kz, each inside one reward-signature class,
    // blocks ordered by their smallest observation.
    std::function<void()> extend = [&]() {
      const auto first = std::find(assigned.begin(), assigned.end(), false);
      if (first == assigned.end()) {
        visit_partition();
        return;
      }
      const auto head = static_cast<std::size_t>(first - assigned.begin());
      std::vector<std::size_t> pool;
      for (std::size_t o = head + 1; o < O; ++o) {
        if (!assigned[o] && signature[o] == signature[head]) {
          pool.push_back(o);
        }
      }
      if (pool.size() + 1 < Kz) {
        return;
      }
      std::vector<std::size_t> pick;
      std::function<void(std::size_t)> choose = [&](std::size_t from) {
        if (pick.size() + 1 == Kz) {
          std::vector<std::size_t> block{head};
          block.insert(block.end(), pick.begin(), pick.end());
          for (auto o : block) {
            assigned[o] = true;
          }
          blocks.push_back(std::move(block));
          extend();
          for (auto o : blocks.back()) {
            assigned[o] = false;
          }
          blocks.pop_back();
          return;
        }
        for (std::size_t i = from; i < pool.size(); ++i) {
          pick.push_back(pool[i]);
          choose(i + 1);
          pick.pop_back();
        }
      };
      choose(0);
    };
    extend();

    if (partitions == 0) {
      summary.note = "pruned: no grouping respects the reward-equivalence partition";
    } else if (summary.certified == 0) {
      summary.note = first_reason;
    }
    result.pairs.push_back(std::move(summary));
  }
  return result;
}

BeliefFactorizer factorizer_ground_truth(const BeliefMDP& bmdp) {
  BeliefFactorizer keys;
  std::unordered_map<std::string, std::size_t> state_ids;
  std::unordered_map<std::string, std::size_t> noise_ids;
  for (const auto& node : bmdp.nodes) {
    const auto sk = belief_key(node.belief.state_marginal, bmdp.quantization);
    const auto zk = belief_key(node.belief.noise_conditional, bmdp.quantization);
    keys.state_key.push_back(state_ids.try_emplace(sk, state_ids.size()).first->second);
    keys.noise_key.push_back(noise_ids.try_emplace(zk, noise_ids.size()).first->second);
  }
  return keys;
}

BeliefFactorizer factorizer_swapped(const BeliefMDP& bmdp) {
  auto keys = factorizer_ground_truth(bmdp);
  std::swap(keys.state_key, keys.noise_key);
  return keys;
}

BeliefPreservationCheck check_belief_preservation(const BeliefMDP& g, const BeliefFactorizer& keys) {
  const auto N = g.nodes.size();
  if (keys.state_key.size() != N || keys.noise_key.size() != N) {
    throw InvalidArgument("belief factorizer keys do not cover all " + std::to_string(N) + " nodes");
  }
  BeliefPreservationCheck out;
  out.state_key_count = keys.state_key.empty()
                            ? 0
                            : *std::max_element(keys.state_key.begin(), keys.state_key.end()) + 1;
  out.noise_key_count = keys.noise_key.empty()
                            ? 0
                            : *std::max_element(keys.noise_key.begin(), keys.noise_key.end()) + 1;
  const std::uint64_t KS = out.state_key_count;
  const std::uint64_t KZ = out.noise_key_count;

  // Truncated nodes carry a placeholder self-loop, not a belief transition.
  auto active = [&](std::size_t n) { return !g.nodes[n].truncated; };

  // Per (node, action): distribution over next (state key, noise key).
  auto next_keys = [&](std::size_t n, std::size_t a) {
    std::unordered_map<std::uint64_t, double> dist;
    for (const auto& e : g.nodes[n].edges[a]) {
      dist[keys.state_key[e.next] * KZ + keys.noise_key[e.next]] += e.probability;
    }
    return dist;
  };

  std::unordered_map<std::uint64_t, double> state_fit;  // (a, k_s, k_s')
  std::vector<double> state_count(KS, 0.0);
  std::unordered_map<std::uint64_t, double> noise_fit;   // (k_z, k_s', k_z')
  std::unordered_map<std::uint64_t, double> noise_norm;  // (k_z, k_s')
  for (std::size_t n = 0; n < N; ++n) {
    if (!active(n)) {
      continue;
    }
    const std::uint64_t ks = keys.state_key[n];
    const std::uint64_t kz = keys.noise_key[n];
    state_count[ks] += 1.0;
    for (std::size_t a = 0; a < g.actions; ++a) {
      for (const auto& [key, prob] : next_keys(n, a)) {
        const auto ns = key / KZ;
        const auto nz = key % KZ;
        state_fit[(a * KS + ks) * KS + ns] += prob;
        noise_fit[(kz * KS + ns) * KZ + nz] += prob;
        noise_norm[kz * KS + ns] += prob;
      }
    }
  }

  // Supports of the pooled factors, for the TV sum over the product form.
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> state_support;  // (a,k_s) -> k_s'
  for (const auto& [key, prob] : state_fit) {
    state_support[key / KS].push_back(key % KS);
  }
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> noise_support;  // (k_z,k_s') -> k_z'
  for (const auto& [key, prob] : noise_fit) {
    noise_support[key / KZ].push_back(key % KZ);
  }

  for (std::size_t n = 0; n < N; ++n) {
    if (!active(n)) {
      continue;
    }
    const std::uint64_t ks = keys.state_key[n];
    const std::uint64_t kz = keys.noise_key[n];
    for (std::size_t a = 0; a < g.actions; ++a) {
      const auto actual = next_keys(n, a);
      double tv = 0.0;
      for (auto ns : state_support[a * KS + ks]) {
        const double ps = state_fit[(a * KS + ks) * KS + ns] / state_count[ks];
        const auto norm_it = noise_norm.find(kz * KS + ns);
        const auto support_it = noise_support.find(kz * KS + ns);
        if (norm_it == noise_norm.end() || support_it == noise_support.end()) {
          // No node with this noise key ever moved to k_s'; the product form puts no mass here.
          for (const auto& [key, prob] : actual) {
            if (key / KZ == ns) {
              tv += prob;
            }
          }
          continue;
        }
        for (auto nz : support_it->second) {
          const double pz = noise_fit[(kz * KS + ns) * KZ + nz] / norm_it->second;
          const auto it = actual.find(ns * KZ + nz);
          const double pa = it == actual.end() ? 0.0 : it->second;
          tv += std::abs(pa - ps * pz);
        }
        // Actual mass on (k_s', k_z') pairs outside the pooled noise support.
        for (const auto& [key, prob] : actual) {
          if (key / KZ == ns &&
              std::find(support_it->second.begin(), support_it->second.end(), key % KZ) ==
                  support_it->second.end()) {
            tv += prob;
          }
        }
      }
      out.residual = std::max(out.residual, 0.5 * tv);
    }
  }
  return out;
}

std::string certification_json(const CertificationReport& r) {
  nlohmann::ordered_json j;
  j["verdict"] = std::string(to_string(r.verdict));
  j["condition"] =
      r.condition == TransitionCondition::kProductForm ? "product_form" : "conditional_independence";
  j["state_codes"] = r.state_codes;
  j["noise_codes"] = r.noise_codes;
  j["transition_residual"] = r.transition_residual;
  j["reward_residual"] = r.reward_residual;
  j["ci_residual"] = r.ci_residual;
  j["redundancy"] = {{"distinct_pairs", r.distinct_pairs},
                     {"redundant_pairs", r.redundant_pairs},
                     {"undetermined_pairs", r.undetermined_pairs}};
  nlohmann::ordered_json ve;
  if (std::isfinite(r.value_equivalence.gap)) {
    ve["gap"] = r.value_equivalence.gap;
  } else {
    ve["gap"] = nullptr;
  }
  if (r.value_equivalence.witness) {
    ve["witness_bijection"] = *r.value_equivalence.witness;
  } else {
    ve["witness_bijection"] = nullptr;
  }
  ve["latent_reward"] = r.estimated.reward;
  ve["latent_transition"] = r.estimated.transition;
  j["value_equivalence"] = std::move(ve);
  j["reasons"] = r.reasons;
  return j.dump(2);
}

void write_certification_json(std::ostream& out, const CertificationReport& r) {
  out << certification_json(r) << '\n';
}

}  // namespace beliefid
