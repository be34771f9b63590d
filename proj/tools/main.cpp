#include <beliefid/belief.hpp>
#include <beliefid/error.hpp>
#include <beliefid/format.hpp>
#include <beliefid/harness.hpp>
#include <beliefid/identifiability.hpp>
#include <beliefid/learner.hpp>
#include <beliefid/pomdp_io.hpp>
#include <beliefid/rng.hpp>
#include <beliefid/solver.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

namespace {

using namespace beliefid;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string pomdp;    // instance file, overrides the config instance
  std::string fixture;  // fixture name, overrides the config instance
  std::string out;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (!c.pomdp.empty()) {
    cfg.instance = {};
    cfg.instance.file = c.pomdp;
  } else if (!c.fixture.empty()) {
    cfg.instance = {};
    cfg.instance.fixture = c.fixture;
  }
  if (c.seed) {
    cfg.seeds = {*c.seed};
  }
  if (!c.out.empty()) {
    cfg.output_dir = c.out;
  }
  return cfg;
}

FactoredPOMDP resolve_instance(const Common& c) {
  auto cfg = resolve_config(c);
  if (c.seed && cfg.instance.generator) {
    cfg.instance.generator->seed = *c.seed;
  }
  return load_instance(cfg.instance);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--pomdp", c.pomdp, "POMDP document (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--fixture", c.fixture, "built-in fixture: TB1, TB2 or GRIDNOISE");
}

// Writes to `path`, or stdout when empty.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + path + " for writing");
  }
  write(out);
}

ObservationEstimator named_estimator(const FactoredPOMDP& p, const std::string& name) {
  if (name == "identity") return estimator_identity(p);
  if (name == "swap") return estimator_swap(p);
  if (name == "xor") return estimator_xor(p);
  throw InvalidArgument("unknown estimator '" + name + "' (expected identity, swap or xor)");
}

void print_residuals(const CertificationReport& r) {
  std::printf("%s  (s_hat=%zu, z_hat=%zu)\n", std::string(to_string(r.verdict)).c_str(), r.state_codes,
              r.noise_codes);
  std::printf("  %-22s %s\n", "transition_residual", format_double(r.transition_residual).c_str());
  std::printf("  %-22s %s\n", "reward_residual", format_double(r.reward_residual).c_str());
  std::printf("  %-22s %s\n", "ci_residual", format_double(r.ci_residual).c_str());
  std::printf("  %-22s %s\n", "witness_gap", format_double(r.value_equivalence.gap).c_str());
  for (const auto& reason : r.reasons) {
    std::printf("  - %s\n", reason.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beliefid: identifiability toolkit for noisy POMDPs"};
  app.require_subcommand(1);

  Common gen_opts, solve_opts, belief_opts, certify_opts, search_opts, train_opts, eval_opts, ablate_opts, verify_opts;

  auto* gen = app.add_subcommand("gen", "generate a random instance or export a fixture");
  add_common(gen, gen_opts);
  gen->add_option("-o,--out", gen_opts.out, "output file (default stdout)");
  GeneratorSpec gen_spec{{2, 2, 2, 4}};
  std::string gen_class = "A";
  bool random = false;
  gen->add_flag("--random", random, "generate a random instance instead of a fixture");
  gen->add_option("--states", gen_spec.sizes.states, "|S|")->check(CLI::PositiveNumber);
  gen->add_option("--noises", gen_spec.sizes.noises, "|Z|")->check(CLI::PositiveNumber);
  gen->add_option("--actions", gen_spec.sizes.actions, "|A|")->check(CLI::PositiveNumber);
  gen->add_option("--observations", gen_spec.sizes.observations, "|O|")->check(CLI::PositiveNumber);
  gen->add_option("--class", gen_class, "decomposition class A..E");
  gen->add_flag("--invertible", gen_spec.invertible, "bijective emission (needs |O| = |S||Z|)");
  gen->add_option("--discount", gen_spec.discount, "discount factor");

  auto* solve = app.add_subcommand("solve", "value iteration on the underlying MDP");
  add_common(solve, solve_opts);
  solve->add_option("-o,--out", solve_opts.out, "value CSV (default stdout)");

  auto* belief = app.add_subcommand("belief", "build the reachable belief MDP");
  add_common(belief, belief_opts);
  belief->add_option("-o,--out", belief_opts.out, "graph JSON (default: summary only)");
  std::size_t cap = 10;
  double quantization = 1e-6;
  belief->add_option("--cap", cap, "horizon cap");
  belief->add_option("--quantization", quantization, "belief key quantization");

  auto* certify = app.add_subcommand("certify", "certify an observation-level estimator");
  add_common(certify, certify_opts);
  certify->add_option("-o,--out", certify_opts.out, "report JSON");
  std::string estimator = "identity";
  bool relaxed = false;
  certify->add_option("--estimator", estimator, "identity, swap or xor");
  certify->add_flag("--ci", relaxed, "use the conditional-independence transition condition");

  auto* search = app.add_subcommand("search", "enumerate and certify estimators");
  add_common(search, search_opts);
  bool search_ci = false;
  search->add_flag("--ci", search_ci, "use the conditional-independence transition condition");

  auto* trn = app.add_subcommand("train", "train one learner and write its checkpoint and loss curve");
  add_common(trn, train_opts);
  trn->add_option("-o,--out", train_opts.out, "output directory");

  auto* eval = app.add_subcommand("eval", "run the experiment over all configured seeds");
  add_common(eval, eval_opts);
  eval->add_option("-o,--out", eval_opts.out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run the four-variant ablation grid");
  add_common(ablate, ablate_opts);
  ablate->add_option("-o,--out", ablate_opts.out, "output directory");

  auto* verify = app.add_subcommand("verify", "run the identifiability invariants on fixtures");
  add_common(verify, verify_opts);
  std::vector<std::string> fixtures{"TB1", "TB2", "GRIDNOISE"};
  bool zero_tolerance = false;
  std::optional<double> fault;
  verify->add_option("--fixtures", fixtures, "fixtures to check");
  verify->add_flag("--zero-tolerance", zero_tolerance, "set every tolerance to 0");
  verify->add_option("--inject-reward-fault", fault, "perturb TB1's reward table by this amount");
  verify->add_option("-o,--out", verify_opts.out, "summary JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      FactoredPOMDP p;
      if (random) {
        gen_spec.decomposition_class = noise_class_from(gen_class);
        gen_spec.seed = gen_opts.seed.value_or(0);
        p = generate_random(gen_spec);
      } else {
        p = resolve_instance(gen_opts);
      }
      emit(gen_opts.out, [&](std::ostream& out) { out << pomdp_to_json(p) << '\n'; });
      return kOk;
    }
    if (*solve) {
      const auto mdp = underlying_mdp(resolve_instance(solve_opts));
      const auto sol = value_iteration(mdp);
      emit(solve_opts.out, [&](std::ostream& out) { write_value_csv(out, sol.value); });
      return kOk;
    }
    if (*belief) {
      const auto p = resolve_instance(belief_opts);
      const auto g = build_belief_mdp(p, {cap, quantization, 100'000});
      const auto v = belief_value(g);
      std::printf("nodes %zu  truncated %zu  truncation_bound %s  initial_value %s\n", g.nodes.size(),
                  g.truncated_count(), format_double(g.truncation_bound).c_str(),
                  format_double(v.values[g.initial]).c_str());
      if (!belief_opts.out.empty()) {
        emit(belief_opts.out, [&](std::ostream& out) { write_belief_graph_json(out, g); });
      }
      return kOk;
    }
    if (*certify) {
      const auto p = resolve_instance(certify_opts);
      Tolerances tol;
      tol.seed = certify_opts.seed.value_or(0);
      const auto report = certify_disentanglement(
          p, named_estimator(p, estimator), tol,
          relaxed ? TransitionCondition::kConditionalIndependence : TransitionCondition::kProductForm);
      print_residuals(report);
      if (!certify_opts.out.empty()) {
        emit(certify_opts.out, [&](std::ostream& out) { write_certification_json(out, report); });
      }
      return report.verdict == Verdict::kCertified ? kOk : kCheckFailed;
    }
    if (*search) {
      const auto p = resolve_instance(search_opts);
      Tolerances tol;
      tol.seed = search_opts.seed.value_or(0);
      const auto result = search_estimators(
          p, search_ci ? TransitionCondition::kConditionalIndependence : TransitionCondition::kProductForm, tol);
      std::printf("%-6s %-6s %-10s %-9s %s\n", "K_s", "K_z", "candidates", "certified", "note");
      for (const auto& pair : result.pairs) {
        std::printf("%-6zu %-6zu %-10zu %-9zu %s\n", pair.state_codes, pair.noise_codes, pair.candidates,
                    pair.certified, pair.note.c_str());
      }
      for (const auto& c : result.certified) {
        std::printf("certified:");
        for (std::size_t o = 0; o < c.estimator.observations(); ++o) {
          std::printf(" %zu->(%zu,%zu)", o, c.estimator.state_code[o], c.estimator.noise_code[o]);
        }
        std::printf("\n");
      }
      return result.certified.empty() ? kCheckFailed : kOk;
    }
    if (*trn) {
      auto cfg = resolve_config(train_opts);
      cfg.seeds.resize(1);
      const auto result = run_experiment(cfg);
      write_metrics_csv(std::cout, result);
      return kOk;
    }
    if (*eval) {
      const auto result = run_experiment(resolve_config(eval_opts));
      write_metrics_csv(std::cout, result);
      return kOk;
    }
    if (*ablate) {
      const auto cfg = resolve_config(ablate_opts);
      const auto result = run_ablation_grid(cfg);
      write_ablation_summary_csv(std::cout, result);
      return kOk;
    }
    if (*verify) {
      VerifyOptions options;
      options.reward_fault = fault;
      options.seed = verify_opts.seed.value_or(0);
      const auto tol = zero_tolerance ? VerifyTolerances::zero() : VerifyTolerances{};
      const auto report = verify_suite(fixtures, tol, options);
      for (const auto& c : report.checks) {
        std::printf("%-4s %-10s %-40s value=%s tol=%s\n", c.passed ? "PASS" : "FAIL", c.fixture.c_str(),
                    c.name.c_str(), format_double(c.value).c_str(), format_double(c.tolerance).c_str());
      }
      if (!verify_opts.out.empty()) {
        emit(verify_opts.out, [&](std::ostream& out) { out << verify_report_json(report) << '\n'; });
      }
      return report.passed() ? kOk : kCheckFailed;
    }
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kUsage;
}
