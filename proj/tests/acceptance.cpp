// Acceptance suite: one PASS/FAIL line per criterion.
//
//   beliefid_acceptance [--out DIR] [--only 1,2,...] [--strict]
//
// Exits 0 once every selected criterion has run, whatever the outcome, unless
// --strict is given; then any FAIL exits 1.

#include <beliefid/belief.hpp>
#include <beliefid/error.hpp>
#include <beliefid/format.hpp>
#include <beliefid/harness.hpp>
#include <beliefid/identifiability.hpp>
#include <beliefid/learner.hpp>
#include <beliefid/pomdp.hpp>
#include <beliefid/rng.hpp>
#include <beliefid/solver.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"

using namespace beliefid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double x) { return format_double(x); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Episode> uniform_episodes(const FactoredPOMDP& p, std::size_t n, std::size_t horizon,
                                      std::uint64_t seed) {
  std::vector<Episode> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(sample_episode(p, StochasticPolicy::uniform(p.sizes.states, p.sizes.actions), horizon,
                                 episode_seed(seed, k)));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome filter_correctness() {
  Stopwatch clock;
  double tv = 0.0;
  double chain = 0.0;
  std::size_t histories = 0;
  std::size_t missed = 0;
  for (const char* name : {"TB1", "TB2"}) {
    const auto a = oracle::audit_filter(make_fixture(name), 5);
    tv = std::max(tv, a.max_tv);
    chain = std::max(chain, a.max_chain_rel);
    histories += a.histories;
    missed += a.missed_impossible;
  }
  const double t = clock.seconds();
  return {tv <= 1e-10 && missed == 0 && t <= 10.0,
          "max_tv=" + fmt(tv) + " chain_rel=" + fmt(chain) + " histories=" + std::to_string(histories) +
              " missed_impossible=" + std::to_string(missed) + " seconds=" + fmt(t)};
}

Outcome reward_reduction() {
  // Spread over several instance shapes; each trial replaces every b(z|s) row.
  std::vector<FactoredPOMDP> pool{make_fixture("TB1"), make_fixture("TB2"), make_fixture("GRIDNOISE")};
  for (std::uint64_t s = 0; s < 3; ++s) {
    GeneratorSpec spec{{3, 3, 2, 5}};
    spec.decomposition_class = NoiseClass::kE;
    spec.seed = s;
    pool.push_back(generate_random(spec));
  }
  CounterRng rng(0, Stream::kProbe, 2);
  double worst = 0.0;
  const std::size_t trials = 1000;
  for (std::size_t k = 0; k < trials; ++k) {
    const auto& p = pool[k % pool.size()];
    const auto S = p.sizes.states;
    const auto Z = p.sizes.noises;
    const auto b = factorize_belief(rng.dirichlet_one(S * Z), S, Z);
    const auto next = factorize_belief(rng.dirichlet_one(S * Z), S, Z);
    std::vector<double> joint(S * Z);
    for (std::size_t s = 0; s < S; ++s) {
      const auto cond = rng.dirichlet_one(Z);
      for (std::size_t z = 0; z < Z; ++z) joint[s * Z + z] = b.state_marginal[s] * cond[z];
    }
    const auto a = rng.below(p.sizes.actions);
    const double before = belief_reward(p, b, a, next);
    const double after = belief_reward(p, factorize_belief(joint, S, Z), a, next);
    worst = std::max(worst, std::abs(before - after));
  }
  return {worst <= 1e-12, "perturbations=" + std::to_string(trials) + " max_change=" + fmt(worst)};
}

Outcome product_form_identifiability() {
  Stopwatch clock;
  std::vector<FactoredPOMDP> instances{make_fixture("TB1")};
  for (std::uint64_t k = 0; k < 100; ++k) {
    GeneratorSpec spec{k % 2 == 0 ? Sizes{2, 2, 2, 4} : Sizes{3, 2, 2, 6}};
    spec.invertible = true;
    spec.seed = 1000 + k;
    instances.push_back(generate_random(spec));
  }
  std::size_t found = 0;
  std::size_t certified = 0;
  std::size_t swap_refuted = 0;
  std::size_t xor_refuted = 0;
  double worst_residual = 0.0;
  for (const auto& p : instances) {
    const auto truth = estimator_identity(p);
    const auto search = search_estimators(p, TransitionCondition::kProductForm);
    const bool has_truth = std::any_of(search.certified.begin(), search.certified.end(), [&](const auto& c) {
      return oracle::same_up_to_relabeling(c.estimator, truth);
    });
    found += has_truth ? 1 : 0;
    const auto r = certify_disentanglement(p, truth);
    worst_residual = std::max({worst_residual, r.transition_residual, r.reward_residual});
    if (r.verdict == Verdict::kCertified && r.transition_residual <= 1e-9 && r.reward_residual <= 1e-9) {
      ++certified;
    }
    swap_refuted += certify_disentanglement(p, estimator_swap(p)).verdict == Verdict::kRefuted ? 1 : 0;
    xor_refuted += certify_disentanglement(p, estimator_xor(p)).verdict == Verdict::kRefuted ? 1 : 0;
  }
  const auto n = instances.size();
  const double t = clock.seconds();
  return {found == n && certified == n && swap_refuted == n && xor_refuted == n && t <= 300.0,
          "instances=" + std::to_string(n) + " truth_found=" + std::to_string(found) +
              " certified=" + std::to_string(certified) + " swap_refuted=" + std::to_string(swap_refuted) +
              " xor_refuted=" + std::to_string(xor_refuted) + " max_residual=" + fmt(worst_residual) +
              " seconds=" + fmt(t)};
}

Outcome ci_identifiability() {
  const NoiseClass classes[] = {NoiseClass::kC, NoiseClass::kD, NoiseClass::kE};
  std::size_t ci_ok = 0;
  std::size_t class_ok = 0;
  std::size_t certified = 0;
  double worst_ci = 0.0;
  std::map<char, std::size_t> misses;
  const std::size_t n = 50;
  for (std::uint64_t k = 0; k < n; ++k) {
    GeneratorSpec spec{k % 2 == 0 ? Sizes{2, 2, 2, 4} : Sizes{3, 2, 2, 6}};
    spec.invertible = true;
    spec.decomposition_class = classes[k % 3];
    spec.seed = 2000 + k;
    const auto p = generate_random(spec);
    const auto truth = estimator_identity(p);
    const auto ci = check_conditional_independence(p, truth, spec.decomposition_class);
    worst_ci = std::max(worst_ci, ci.ci_residual);
    ci_ok += ci.ci_residual <= 1e-9 ? 1 : 0;
    const bool true_fits =
        std::find(ci.fitting.begin(), ci.fitting.end(), spec.decomposition_class) != ci.fitting.end();
    const bool right = ci.best && true_fits &&
                       (*ci.best == spec.decomposition_class || is_nested_in(*ci.best, spec.decomposition_class));
    if (right) {
      ++class_ok;
    } else {
      ++misses[to_char(spec.decomposition_class)];
    }
    const auto r = certify_disentanglement(p, truth, {}, TransitionCondition::kConditionalIndependence);
    certified += r.verdict == Verdict::kCertified ? 1 : 0;
  }
  std::string miss;
  for (const auto& [c, count] : misses) miss += std::string(" miss_") + c + "=" + std::to_string(count);
  return {ci_ok == n && class_ok >= 48 && certified == n,
          "instances=" + std::to_string(n) + " ci_ok=" + std::to_string(ci_ok) + " max_ci=" + fmt(worst_ci) +
              " class_correct=" + std::to_string(class_ok) + " ci_certified=" + std::to_string(certified) + miss};
}

Outcome belief_preservation() {
  const auto p = make_fixture("TB2");
  const auto g = build_belief_mdp(p, {8, 1e-4, 1'000'000});
  const double tol = static_cast<double>(p.sizes.observations) * 1e-4;
  const auto truth = check_belief_preservation(g, factorizer_ground_truth(g));
  const auto swapped = check_belief_preservation(g, factorizer_swapped(g));
  return {truth.residual <= tol && swapped.residual >= 10.0 * tol,
          "nodes=" + std::to_string(g.nodes.size()) + " ground_truth=" + fmt(truth.residual) +
              " swapped=" + fmt(swapped.residual) + " tolerance=" + fmt(tol)};
}

Outcome belief_value_bound() {
  const auto p = make_fixture("TB1");
  const auto g = build_belief_mdp(p, {10, 1e-6, 100'000});
  const double v = belief_value(g).values[g.initial];
  const double oracle_v = oracle::expectimax(p, 30);
  const double bound = std::pow(p.discount, 30) * p.reward_bound / (1.0 - p.discount) + 1e-6;
  const double gap = std::abs(v - oracle_v);
  return {gap <= bound,
          "belief_value=" + fmt(v) + " expectimax30=" + fmt(oracle_v) + " gap=" + fmt(gap) + " bound=" + fmt(bound)};
}

Outcome elbo_correctness() {
  Stopwatch clock;
  const auto p = make_fixture("TB1");
  const auto exact = oracle::tb1_exact_model();
  double worst = 0.0;
  for (std::size_t horizon = 1; horizon <= 5; ++horizon) {
    for (const auto& ep : uniform_episodes(p, 8, horizon, 300 + horizon)) {
      const auto e = elbo(exact, std::span<const Episode>(&ep, 1));
      const double reward_ll = -static_cast<double>(ep.horizon()) * 0.5 * std::log(2.0 * M_PI);
      worst = std::max(worst, std::abs(-e.total - (oracle::pomdp_log_likelihood(p, ep) + reward_ll)));
    }
  }

  const auto grid = make_fixture("GRIDNOISE");
  auto m = init_model(latent_sizes_for(grid, 3, 2), 7);
  CounterRng rng(7, Stream::kProbe, 3);
  m.params.for_each([&](const char*, std::vector<double>& t) {
    for (auto& x : t) x = rng.uniform(-1.5, 1.5);
  });
  const auto data = uniform_episodes(grid, 2, 4, 31);
  const auto audit = oracle::audit_gradients(m, data, {}, 1e-5, 1e-3);
  const double t = clock.seconds();
  return {worst <= 1e-8 && audit.max_relative_error <= 1e-5 && t <= 60.0,
          "exact_gap=" + fmt(worst) + " grad_rel=" + fmt(audit.max_relative_error) +
              " grad_abs=" + fmt(audit.max_absolute_error) + " entries=" + std::to_string(audit.entries) +
              " seconds=" + fmt(t)};
}

struct GridRuns {
  ExperimentConfig base;
  std::map<AblationVariant, ExperimentResult> results;
  std::map<AblationVariant, double> seconds;

  const ExperimentResult& run(AblationVariant v) {
    auto it = results.find(v);
    if (it == results.end()) {
      Stopwatch clock;
      it = results.emplace(v, run_experiment(ablation_config(base, v))).first;
      seconds[v] = clock.seconds();
    }
    return it->second;
  }
};

ExperimentConfig grid_config(const fs::path& out) {
  ExperimentConfig c;
  c.instance.fixture = "GRIDNOISE";
  c.state_codes = 4;
  c.noise_codes = 3;
  c.alpha = 1.0;
  c.beta = 0.25;
  c.training.step_count = 20000;
  c.seeds = {0, 1, 2, 3, 4};
  c.output_dir = out;
  return c;
}

Outcome end_to_end(GridRuns& grid) {
  const auto& r = grid.run(AblationVariant::kFull);
  const double per_seed = grid.seconds[AblationVariant::kFull] / static_cast<double>(r.runs.size());
  std::size_t good = 0;
  std::string rows;
  for (const auto& run : r.runs) {
    const auto& m = run.row;
    const bool ok = m.mi_z_hat_vs_s <= 0.05 && m.mi_s_hat_vs_s >= 0.8 * std::log(4.0) &&
                    m.mean_return >= 0.95 * r.belief_optimum;
    good += ok ? 1 : 0;
    rows += " [seed " + m.seed + (ok ? " ok" : " bad") + " mi_s=" + fmt(m.mi_s_hat_vs_s) +
            " mi_z=" + fmt(m.mi_z_hat_vs_s) + " return=" + fmt(m.mean_return) + "]";
  }
  return {good >= 4 && per_seed <= 300.0,
          "passing_seeds=" + std::to_string(good) + "/" + std::to_string(r.runs.size()) +
              " optimum=" + fmt(r.belief_optimum) + " seconds_per_seed=" + fmt(per_seed) + rows};
}

Outcome ablations(GridRuns& grid) {
  auto med = [&](AblationVariant v, double MetricsRow::*field) {
    std::vector<double> xs;
    for (const auto& run : grid.run(v).runs) xs.push_back(run.row.*field);
    return median(xs);
  };
  const double full = med(AblationVariant::kFull, &MetricsRow::mean_return);
  const double sym = med(AblationVariant::kSymmetric, &MetricsRow::mean_return);
  const double no_reward = med(AblationVariant::kNoReward, &MetricsRow::mean_return);
  const double no_kl = med(AblationVariant::kNoKl, &MetricsRow::mean_return);
  const double mi_full = med(AblationVariant::kFull, &MetricsRow::mi_s_hat_vs_s);
  const double mi_no_reward = med(AblationVariant::kNoReward, &MetricsRow::mi_s_hat_vs_s);
  const bool ok = full >= sym && full > no_reward && full > no_kl && mi_no_reward < mi_full;
  std::string failed;
  if (!(full >= sym)) failed += " full<symmetric";
  if (!(full > no_reward)) failed += " full<=no_reward";
  if (!(full > no_kl)) failed += " full<=no_kl";
  if (!(mi_no_reward < mi_full)) failed += " mi_s(no_reward)>=mi_s(full)";
  return {ok, "median_return full=" + fmt(full) + " symmetric=" + fmt(sym) + " no_reward=" + fmt(no_reward) +
                  " no_kl=" + fmt(no_kl) + " median_mi_s full=" + fmt(mi_full) + " no_reward=" + fmt(mi_no_reward) +
                  " (means " + fmt(grid.run(AblationVariant::kFull).mean.mi_s_hat_vs_s) + " vs " +
                  fmt(grid.run(AblationVariant::kNoReward).mean.mi_s_hat_vs_s) + ")" +
                  (failed.empty() ? "" : " failed:" + failed)};
}

Outcome determinism(GridRuns& grid, const fs::path& out) {
  // Seed 0 of the full variant, run twice more in fresh directories.
  auto c = ablation_config(grid.base, AblationVariant::kFull);
  c.seeds = {0};
  std::vector<std::string> mismatched;
  c.output_dir = out / "determinism_a";
  (void)run_experiment(c);
  c.output_dir = out / "determinism_b";
  (void)run_experiment(c);
  std::vector<fs::path> files{"metrics.csv"};
  for (const char* f : {"model.json", "loss.csv", "certification.json"}) files.push_back(fs::path("seed_0") / f);
  for (const auto& f : files) {
    const auto a = slurp(out / "determinism_a" / f);
    if (a.empty() || a != slurp(out / "determinism_b" / f)) mismatched.push_back(f.string());
  }
  // The multi-seed run of criterion 8 holds seed 0 in the same place.
  if (grid.results.count(AblationVariant::kFull) != 0) {
    const auto full_dir = ablation_config(grid.base, AblationVariant::kFull).output_dir;
    for (const char* f : {"model.json", "loss.csv", "certification.json"}) {
      if (slurp(full_dir / "seed_0" / f) != slurp(out / "determinism_a" / "seed_0" / f)) {
        mismatched.push_back(std::string("criterion8 seed_0/") + f);
      }
    }
  }
  const std::vector<std::string> fixtures{"TB1", "GRIDNOISE"};
  if (verify_report_json(verify_suite(fixtures)) != verify_report_json(verify_suite(fixtures))) {
    mismatched.push_back("verify report");
  }
  std::string detail = "compared=" + std::to_string(files.size() + 4) + " mismatched=" + std::to_string(mismatched.size());
  for (const auto& m : mismatched) detail += " " + m;
  return {mismatched.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beliefid acceptance suite"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--out", out, "directory for training artifacts");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) != 0; };

  GridRuns grid;
  grid.base = grid_config(out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"filter correctness", filter_correctness},
      {"belief reward reduction", reward_reduction},
      {"identifiability, product form", product_form_identifiability},
      {"identifiability, conditional independence", ci_identifiability},
      {"belief-space factorization", belief_preservation},
      {"belief-MDP value", belief_value_bound},
      {"ELBO and gradients", elbo_correctness},
      {"end-to-end disentanglement", [&] { return end_to_end(grid); }},
      {"ablation ordering", [&] { return ablations(grid); }},
      {"determinism", [&] { return determinism(grid, out); }},
  };

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted(id)) continue;
    Outcome o;
    Stopwatch clock;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("criterion %2d %s  %s (%.1fs)  %s\n", id, o.passed ? "PASS" : "FAIL", criteria[k].first.c_str(),
                clock.seconds(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d failing criteria\n", failures);
  return strict && failures > 0 ? 1 : 0;
}
