#include "beliefid/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "beliefid/error.hpp"
#include "beliefid/format.hpp"
#include "beliefid/rng.hpp"

namespace beliefid {

namespace {

constexpr double kTieTolerance = 1e-10;
constexpr std::size_t kExhaustivePolicyLimit = 1024;
constexpr std::size_t kMaxSweeps = 10'000'000;

// Expected immediate reward and next-state distribution under a state policy.
struct PolicyMatrices {
  std::vector<double> reward;      // [s]
  std::vector<double> transition;  // [s][s']
};

PolicyMatrices policy_matrices(const MDP& mdp, const StatePolicy& policy) {
  const auto n = mdp.states;
  PolicyMatrices m;
  m.reward.assign(n, 0.0);
  m.transition.assign(n * n, 0.0);
  auto accumulate = [&](std::size_t s, std::size_t a, double weight) {
    if (weight == 0.0) {
      return;
    }
    for (std::size_t t = 0; t < n; ++t) {
      const double p = mdp.prob(a, s, t);
      m.transition[s * n + t] += weight * p;
      m.reward[s] += weight * p * mdp.reward_of(s, a, t);
    }
  };
  if (const auto* d = std::get_if<DeterministicPolicy>(&policy)) {
    if (d->action.size() != n) {
      throw InvalidArgument("policy covers " + std::to_string(d->action.size()) + " states, MDP has " +
                            std::to_string(n));
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (d->action[s] >= mdp.actions) {
        throw InvalidArgument("policy action out of range");
      }
      accumulate(s, d->action[s], 1.0);
    }
  } else {
    const auto& st = std::get<StochasticPolicy>(policy);
    if (st.actions != mdp.actions || st.probs.size() != n * mdp.actions) {
      throw InvalidArgument("stochastic policy arity does not match the MDP");
    }
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t a = 0; a < mdp.actions; ++a) {
        accumulate(s, a, st.probs[s * mdp.actions + a]);
      }
    }
  }
  return m;
}

double q_value(const MDP& mdp, const std::vector<double>& v, std::size_t s, std::size_t a) {
  double q = 0.0;
  for (std::size_t t = 0; t < mdp.states; ++t) {
    const double p = mdp.prob(a, s, t);
    if (p != 0.0) {
      q += p * (mdp.reward_of(s, a, t) + mdp.discount * v[t]);
    }
  }
  return q;
}

// One Bellman optimality backup; returns max |new - old|.
double optimal_backup(const MDP& mdp, const std::vector<double>& v, std::vector<double>& out) {
  double delta = 0.0;
  for (std::size_t s = 0; s < mdp.states; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      best = std::max(best, q_value(mdp, v, s, a));
    }
    out[s] = best;
    delta = std::max(delta, std::abs(best - v[s]));
  }
  return delta;
}

}  // namespace

void require_valid(const MDP& mdp) {
  if (mdp.states == 0 || mdp.actions == 0) {
    throw InvalidModel("MDP needs at least one state and one action");
  }
  if (mdp.transition.size() != mdp.actions * mdp.states * mdp.states ||
      mdp.reward.size() != mdp.states * mdp.actions * mdp.states) {
    throw InvalidModel("MDP table sizes do not match its state/action counts");
  }
  if (!(mdp.discount >= 0.0 && mdp.discount < 1.0)) {
    throw InvalidModel("MDP discount outside [0,1)");
  }
  for (std::size_t a = 0; a < mdp.actions; ++a) {
    for (std::size_t s = 0; s < mdp.states; ++s) {
      double sum = 0.0;
      for (std::size_t t = 0; t < mdp.states; ++t) {
        const double p = mdp.prob(a, s, t);
        if (!(p >= 0.0 && p <= 1.0)) {
          throw InvalidModel("transition probability outside [0,1] at a=" + std::to_string(a) +
                             " s=" + std::to_string(s));
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw InvalidModel("non-stochastic transition row at a=" + std::to_string(a) +
                           " s=" + std::to_string(s));
      }
    }
  }
}

ValueFunction policy_evaluation(const MDP& mdp, const StatePolicy& policy, double tol) {
  if (!(tol > 0.0)) {
    throw InvalidArgument("policy_evaluation: tolerance must be positive");
  }
  require_valid(mdp);
  const auto n = mdp.states;
  const auto m = policy_matrices(mdp, policy);

  std::vector<double> v(n, 0.0);
  std::vector<double> next(n, 0.0);
  auto backup = [&](const std::vector<double>& in, std::vector<double>& out) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double x = m.reward[s];
      for (std::size_t t = 0; t < n; ++t) {
        x += mdp.discount * m.transition[s * n + t] * in[t];
      }
      out[s] = x;
      delta = std::max(delta, std::abs(x - in[s]));
    }
    return delta;
  };

  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double delta = backup(v, next);
    v.swap(next);
    if (delta <= tol) {
      break;
    }
  }
  ValueFunction out;
  out.residual = backup(v, next);
  out.values = std::move(v);
  return out;
}

DeterministicPolicy greedy_policy(const MDP& mdp, const std::vector<double>& values) {
  DeterministicPolicy policy;
  policy.action.assign(mdp.states, 0);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    std::vector<double> q(mdp.actions);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      q[a] = q_value(mdp, values, s, a);
      best = std::max(best, q[a]);
    }
    const double slack = kTieTolerance * std::max(1.0, std::abs(best));
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      if (q[a] >= best - slack) {
        policy.action[s] = a;
        break;
      }
    }
  }
  return policy;
}

OptimalSolution value_iteration(const MDP& mdp, double tol) {
  if (!(tol > 0.0)) {
    throw InvalidArgument("value_iteration: tolerance must be positive");
  }
  require_valid(mdp);
  std::vector<double> v(mdp.states, 0.0);
  std::vector<double> next(mdp.states, 0.0);
  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double delta = optimal_backup(mdp, v, next);
    v.swap(next);
    if (delta <= tol) {
      break;
    }
  }
  OptimalSolution out;
  out.value.residual = optimal_backup(mdp, v, next);
  out.value.values = std::move(v);
  out.policy = greedy_policy(mdp, out.value.values);
  return out;
}

Partition bisimulation_partition(const MDP& mdp, double eps) {
  if (eps < 0.0) {
    throw InvalidArgument("bisimulation_partition: eps must be nonnegative");
  }
  require_valid(mdp);
  const auto n = mdp.states;
  Partition part;
  part.block.assign(n, 0);
  part.block_count = n == 0 ? 0 : 1;

  while (true) {
    // Signature: expected reward per action, then block mass per (action, block).
    const auto width = mdp.actions * (1 + part.block_count);
    std::vector<double> sig(n * width, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      double* row = sig.data() + s * width;
      for (std::size_t a = 0; a < mdp.actions; ++a) {
        row[a] = mdp.expected_reward(s, a);
        for (std::size_t t = 0; t < n; ++t) {
          row[mdp.actions + a * part.block_count + part.block[t]] += mdp.prob(a, s, t);
        }
      }
    }
    auto close = [&](std::size_t x, std::size_t y) {
      for (std::size_t k = 0; k < width; ++k) {
        if (std::abs(sig[x * width + k] - sig[y * width + k]) > eps) {
          return false;
        }
      }
      return true;
    };

    // Split each block: a state joins the first new group (in state order)
    // whose representative it matches.
    std::vector<std::size_t> representative;
    std::vector<std::size_t> old_block_of_group;
    Partition refined;
    refined.block.assign(n, 0);
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t group = representative.size();
      for (std::size_t g = 0; g < representative.size(); ++g) {
        if (old_block_of_group[g] == part.block[s] && close(representative[g], s)) {
          group = g;
          break;
        }
      }
      if (group == representative.size()) {
        representative.push_back(s);
        old_block_of_group.push_back(part.block[s]);
      }
      refined.block[s] = group;
    }
    refined.block_count = representative.size();
    const bool stable = refined.block_count == part.block_count;
    part = std::move(refined);
    if (stable) {
      return part;
    }
  }
}

std::size_t RedundancyReport::count(PairVerdict v) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [&](const StatePair& p) { return p.verdict == v; }));
}

RedundancyReport no_redundancy_check(const MDP& mdp, std::size_t n_policies, std::uint64_t seed) {
  if (n_policies == 0) {
    throw InvalidArgument("no_redundancy_check: need at least one policy");
  }
  require_valid(mdp);
  const auto n = mdp.states;
  RedundancyReport report;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      report.pairs.push_back({i, j, PairVerdict::kUndetermined, std::nullopt, 0.0});
    }
  }

  auto test_policy = [&](const DeterministicPolicy& policy) {
    const auto v = policy_evaluation(mdp, policy);
    ++report.policies_tested;
    for (auto& pair : report.pairs) {
      const double gap = std::abs(v.values[pair.first] - v.values[pair.second]);
      if (gap > pair.value_gap) {
        pair.value_gap = gap;
      }
      if (pair.verdict != PairVerdict::kDistinct && gap > kValueDistinctness) {
        pair.verdict = PairVerdict::kDistinct;
        pair.witness = policy;
      }
    }
  };
  auto all_separated = [&] { return report.all_distinct(); };

  // |A|^|S| without overflow.
  std::size_t total = 1;
  bool small = true;
  for (std::size_t s = 0; s < n && small; ++s) {
    if (total > kExhaustivePolicyLimit / mdp.actions) {
      small = false;
    }
    total *= mdp.actions;
  }
  small = small && total <= kExhaustivePolicyLimit;

  if (small) {
    report.exhaustive = true;
    DeterministicPolicy policy;
    policy.action.assign(n, 0);
    for (std::size_t k = 0; k < total && !all_separated(); ++k) {
      std::size_t code = k;
      for (std::size_t s = 0; s < n; ++s) {
        policy.action[s] = code % mdp.actions;
        code /= mdp.actions;
      }
      test_policy(policy);
    }
  } else {
    test_policy(value_iteration(mdp).policy);
    CounterRng rng(seed, Stream::kPolicySearch);
    DeterministicPolicy policy;
    policy.action.assign(n, 0);
    for (std::size_t k = 0; k < n_policies && !all_separated(); ++k) {
      for (auto& a : policy.action) {
        a = rng.below(mdp.actions);
      }
      test_policy(policy);
    }
  }

  // Bisimilar states can still be split by a policy that acts differently in each;
  // they are interchangeable for every purpose that matters here, so that wins.
  const auto partition = bisimulation_partition(mdp, kBellmanTolerance);
  for (auto& pair : report.pairs) {
    if (partition.block[pair.first] == partition.block[pair.second]) {
      pair.verdict = PairVerdict::kRedundant;
      pair.witness.reset();
    }
  }
  return report;
}

void write_value_csv(std::ostream& out, const ValueFunction& v) {
  out << "state,value\n";
  for (std::size_t s = 0; s < v.values.size(); ++s) {
    out << s << ',' << format_double(v.values[s]) << '\n';
  }
}

}  // namespace beliefid
