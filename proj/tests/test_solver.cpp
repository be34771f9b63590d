#include <beliefid/pomdp.hpp>
#include <beliefid/solver.hpp>

#include <cmath>
#include <sstream>

#include "doctest.h"

using namespace beliefid;

namespace {

MDP tb1() { return underlying_mdp(make_fixture("TB1")); }

// TB1 with s1 duplicated: states {s0, s1, s1'}; flip from s0 goes to s1.
MDP tb1_duplicated() {
  MDP m;
  m.states = 3;
  m.actions = 2;
  m.discount = 0.9;
  m.transition.assign(2 * 3 * 3, 0.0);
  m.reward.assign(3 * 2 * 3, 0.0);
  auto T = [&](std::size_t a, std::size_t s, std::size_t s2) -> double& { return m.transition[(a * 3 + s) * 3 + s2]; };
  T(0, 0, 0) = 1;
  T(0, 1, 1) = 1;
  T(0, 2, 2) = 1;
  T(1, 0, 1) = 1;
  T(1, 1, 0) = 1;
  T(1, 2, 0) = 1;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t s2 = 1; s2 < 3; ++s2) m.reward[(s * 2 + a) * 3 + s2] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("policy_evaluation on TB1") {
  const auto m = tb1();
  const auto stay = policy_evaluation(m, DeterministicPolicy{{0, 0}}, 1e-9);
  CHECK(stay.values[1] == doctest::Approx(10.0).epsilon(1e-8));
  CHECK(stay.values[0] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(stay.residual <= 1e-9);
  const auto flip = policy_evaluation(m, DeterministicPolicy{{1, 1}}, 1e-9);
  const double g = 0.9;
  CHECK(std::abs(flip.values[0] - 1.0 / (1 - g * g)) <= 1e-8 / (1 - g));
  CHECK(std::abs(flip.values[1] - g / (1 - g * g)) <= 1e-8 / (1 - g));
  // constant reward c gives c / (1 - gamma)
  auto c = m;
  std::fill(c.reward.begin(), c.reward.end(), 0.7);
  for (double v : policy_evaluation(c, StochasticPolicy::uniform(2, 2)).values)
    CHECK(v == doctest::Approx(7.0).epsilon(1e-8));
}

TEST_CASE("value_iteration") {
  const auto sol = value_iteration(tb1());
  CHECK(sol.value.values[0] == doctest::Approx(10.0).epsilon(1e-8));
  CHECK(sol.value.values[1] == doctest::Approx(10.0).epsilon(1e-8));
  CHECK(sol.policy.action[0] == 1);

  auto myopic = tb1();
  myopic.discount = 0.01;
  CHECK(value_iteration(myopic).policy.action[0] == 1);

  const auto grid = underlying_mdp(make_fixture("GRIDNOISE", 0));
  const auto gs = value_iteration(grid);
  for (auto a : gs.policy.action) CHECK(a == 1);

  // greedy policy evaluated agrees with V*
  const auto pe = policy_evaluation(grid, gs.policy, 1e-9);
  for (std::size_t s = 0; s < grid.states; ++s)
    CHECK(std::abs(pe.values[s] - gs.value.values[s]) <= 2e-9 / (1 - grid.discount));

  // constant shift moves V* by c/(1-gamma) and keeps the argmax
  auto shifted = grid;
  for (auto& r : shifted.reward) r += 2.0;
  const auto ss = value_iteration(shifted);
  CHECK(ss.policy.action == gs.policy.action);
  for (std::size_t s = 0; s < grid.states; ++s)
    CHECK(ss.value.values[s] - gs.value.values[s] == doctest::Approx(2.0 / (1 - grid.discount)).epsilon(1e-7));
}

TEST_CASE("bisimulation_partition") {
  CHECK(bisimulation_partition(tb1(), 1e-9).block_count == 2);
  const auto d = bisimulation_partition(tb1_duplicated(), 1e-9);
  CHECK(d.block_count == 2);
  CHECK(d.block[1] == d.block[2]);
  auto flat = tb1_duplicated();
  std::fill(flat.reward.begin(), flat.reward.end(), 1.0);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t s2 = 0; s2 < 3; ++s2) flat.transition[(a * 3 + s) * 3 + s2] = 1.0 / 3.0;
  CHECK(bisimulation_partition(flat, 1e-9).block_count == 1);
}

TEST_CASE("no_redundancy_check") {
  const auto r = no_redundancy_check(tb1(), 16, 0);
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].verdict == PairVerdict::kDistinct);
  REQUIRE(r.pairs[0].witness);
  CHECK(r.exhaustive);

  const auto d = no_redundancy_check(tb1_duplicated(), 16, 0);
  for (const auto& pr : d.pairs) {
    if (pr.first == 1 && pr.second == 2) {
      CHECK(pr.verdict == PairVerdict::kRedundant);
    } else {
      CHECK(pr.verdict == PairVerdict::kDistinct);
    }
  }

  const auto g = no_redundancy_check(underlying_mdp(make_fixture("GRIDNOISE", 0)), 16, 0);
  CHECK(g.pairs.size() == 6);
  CHECK(g.all_distinct());

  // bisimilar states have equal values under every deterministic policy
  const auto dup = tb1_duplicated();
  for (std::size_t k = 0; k < 8; ++k) {
    DeterministicPolicy pi{{k & 1, (k >> 1) & 1, (k >> 2) & 1}};
    const auto v = policy_evaluation(dup, pi, 1e-10).values;
    if (pi.action[1] == pi.action[2]) CHECK(std::abs(v[1] - v[2]) < 1e-8);
  }
}

TEST_CASE("value csv") {
  std::ostringstream out;
  write_value_csv(out, ValueFunction{{1.5, 0.25}, 0.0});
  CHECK(out.str() == "state,value\n0,1.5\n1,0.25\n");
}
