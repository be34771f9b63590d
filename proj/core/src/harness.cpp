#include "beliefid/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "beliefid/error.hpp"
#include "beliefid/format.hpp"
#include "beliefid/identifiability.hpp"
#include "beliefid/pomdp_io.hpp"
#include "beliefid/rng.hpp"
#include "beliefid/solver.hpp"
#include "json.hpp"

namespace beliefid {

namespace {

using json = nlohmann::ordered_json;

std::ofstream open_output(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  return out;
}

double discounted_return(const Episode& ep, double discount) {
  double g = 0.0;
  double w = 1.0;
  for (const auto& s : ep.steps) {
    g += w * s.reward;
    w *= discount;
  }
  return g;
}

double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) {
    return 0.0;
  }
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) {
    ss += (v - mean) * (v - mean);
  }
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Runs `f` and re-raises library errors tagged with the seed and stage.
template <class F>
auto staged(std::uint64_t seed, const char* stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(seed, stage, e.what());
  }
}

// Majority (state code, noise code) per observation along the probe episodes; the
// model's own first-step guess for observations never seen.
ObservationEstimator induced_estimator(const LearnedWorldModel& model, const std::vector<Episode>& probes) {
  const auto O = model.sizes.observations;
  const auto C = model.sizes.codes();
  std::vector<double> counts(O * C, 0.0);
  for (const auto& ep : probes) {
    const auto codes = argmax_codes(model, ep);
    for (std::size_t t = 0; t < codes.size(); ++t) {
      counts[ep.observation_at(t) * C + codes[t].first * model.sizes.noise_codes + codes[t].second] += 1.0;
    }
  }
  ObservationEstimator g{model.sizes.state_codes, model.sizes.noise_codes, {}, {}};
  for (std::size_t o = 0; o < O; ++o) {
    const auto* row = counts.data() + o * C;
    std::size_t c = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    if (row[c] == 0.0) {
      Episode single;
      single.final_observation = o;
      const auto first = argmax_codes(model, single).front();
      c = first.first * model.sizes.noise_codes + first.second;
    }
    g.state_code.push_back(c / model.sizes.noise_codes);
    g.noise_code.push_back(c % model.sizes.noise_codes);
  }
  return g;
}

SeedRun run_seed(const ExperimentConfig& cfg, const FactoredPOMDP& p, double optimum, std::uint64_t seed,
                 const std::filesystem::path& dir) {
  const auto S = p.sizes.states;
  const auto Z = p.sizes.noises;
  const auto uniform = StochasticPolicy::uniform(S, p.sizes.actions);

  // Training starts cycle through every latent so each cell is well represented.
  const auto data = staged(seed, "data", [&] {
    const auto base = CounterRng(seed, Stream::kTrainingData).next();
    std::vector<Episode> eps;
    for (std::size_t i = 0; i < cfg.training_episodes; ++i) {
      eps.push_back(sample_episode(p, uniform, cfg.training_horizon, episode_seed(base, i),
                                   std::make_pair(i % S, (i / S) % Z)));
    }
    return eps;
  });

  auto training = cfg.training;
  training.seed = seed;
  const auto trained = staged(seed, "train", [&] {
    auto model = init_model(latent_sizes_for(p, cfg.state_codes, cfg.noise_codes), seed,
                            training.switches.asymmetric_emission);
    model.alpha = cfg.alpha;
    model.beta = cfg.beta;
    return train(std::move(model), data, training);
  });

  SeedRun run;
  run.seed = seed;
  run.row.seed = std::to_string(seed);
  run.final_loss = trained.loss_curve.back().loss;
  run.kl_columns_zero = std::all_of(trained.loss_curve.begin(), trained.loss_curve.end(),
                                    [](const LossPoint& l) { return l.loss.kl_s == 0.0 && l.loss.kl_z == 0.0; });
  run.permutation = emission_permutation_test(trained.model, data);

  staged(seed, "evaluate", [&] {
    const auto policy = make_greedy_policy(trained.model, p.discount);
    const auto base = CounterRng(seed, Stream::kEvaluation).next();
    std::vector<double> returns;
    for (std::size_t i = 0; i < cfg.evaluation_episodes; ++i) {
      returns.push_back(
          discounted_return(sample_episode(p, policy, cfg.evaluation_horizon, episode_seed(base, i)), p.discount));
    }
    run.row.mean_return = mean_of(returns);
    run.row.return_std = sample_std(returns);
    run.row.value_gap = optimum - run.row.mean_return;
    return 0;
  });

  const auto probes = staged(seed, "probe", [&] {
    const auto base = CounterRng(seed, Stream::kProbe).next();
    std::vector<Episode> eps;
    for (std::size_t i = 0; i < cfg.probe_episodes; ++i) {
      eps.push_back(sample_episode(p, uniform, cfg.probe_horizon, episode_seed(base, i)));
    }
    return eps;
  });

  staged(seed, "metrics", [&] {
    const auto Ks = cfg.state_codes;
    const auto Kz = cfg.noise_codes;
    std::vector<double> state_counts(Ks * S, 0.0);
    std::vector<double> noise_counts(Kz * S, 0.0);
    for (const auto& ep : probes) {
      const auto codes = argmax_codes(trained.model, ep);
      for (std::size_t t = 0; t < codes.size(); ++t) {
        state_counts[codes[t].first * S + ep.state_at(t)] += 1.0;
        noise_counts[codes[t].second * S + ep.state_at(t)] += 1.0;
      }
    }
    run.row.mi_s_hat_vs_s = mutual_information(state_counts, Ks, S);
    run.row.mi_z_hat_vs_s = mutual_information(noise_counts, Kz, S);
    run.row.transition_residual = std::nan("");
    run.row.reward_residual = std::nan("");
    if (p.invertible) {
      const auto g = induced_estimator(trained.model, probes);
      run.row.transition_residual = check_transition_preservation(p, g).residual;
      run.row.reward_residual = check_reward_preservation(p, g).residual;
      if (p.sizes.states <= 8) {
        auto out = open_output(dir / "certification.json");
        write_certification_json(out, certify_disentanglement(p, g));
      }
    }
    return 0;
  });

  staged(seed, "write", [&] {
    std::filesystem::create_directories(dir);
    save_model(dir / "model.json", trained.model);
    auto loss = open_output(dir / "loss.csv");
    write_loss_csv(loss, trained.loss_curve);
    return 0;
  });
  return run;
}

void write_row(std::ostream& out, const MetricsRow& r) {
  out << r.seed << ',' << format_double(r.mi_s_hat_vs_s) << ',' << format_double(r.mi_z_hat_vs_s) << ','
      << format_double(r.transition_residual) << ',' << format_double(r.reward_residual) << ','
      << format_double(r.value_gap) << ',' << format_double(r.mean_return) << ',' << format_double(r.return_std)
      << '\n';
}

GeneratorSpec generator_from_json(const json& j) {
  GeneratorSpec g;
  const auto& s = j.at("sizes");
  g.sizes = {s.at("states").get<std::size_t>(), s.at("noises").get<std::size_t>(),
             s.at("actions").get<std::size_t>(), s.at("observations").get<std::size_t>()};
  g.decomposition_class = noise_class_from(j.value("decomposition_class", std::string("A")));
  g.invertible = j.value("invertible", false);
  g.seed = j.value("seed", std::uint64_t{0});
  g.discount = j.value("discount", 0.9);
  return g;
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end()) {
      throw FormatError("unknown key '" + k + "' in " + where);
    }
  }
}

// ---- verify suite ----

double tv(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += std::abs(a[i] - b[i]);
  }
  return 0.5 * d;
}

// Posterior over the last latent by summing every latent path consistent with the history.
struct PathOracle {
  const FactoredPOMDP& p;
  struct Path {
    std::size_t last;
    double weight;
  };

  std::vector<Path> start(std::size_t o) const {
    std::vector<Path> out;
    for (std::size_t j = 0; j < p.joint_count(); ++j) {
      const double w = p.initial_belief[j] * p.emit(j / p.sizes.noises, j % p.sizes.noises, o);
      if (w > 0.0) {
        out.push_back({j, w});
      }
    }
    return out;
  }

  std::vector<Path> extend(const std::vector<Path>& paths, std::size_t a, std::size_t o) const {
    const auto Z = p.sizes.noises;
    std::vector<Path> out;
    for (const auto& path : paths) {
      for (std::size_t j = 0; j < p.joint_count(); ++j) {
        const double w = path.weight * p.latent_transition(a, path.last / Z, path.last % Z, j / Z, j % Z) *
                         p.emit(j / Z, j % Z, o);
        if (w > 0.0) {
          out.push_back({j, w});
        }
      }
    }
    return out;
  }

  std::vector<double> posterior(const std::vector<Path>& paths) const {
    std::vector<double> b(p.joint_count(), 0.0);
    double total = 0.0;
    for (const auto& path : paths) {
      b[path.last] += path.weight;
      total += path.weight;
    }
    for (auto& x : b) {
      x /= total;
    }
    return b;
  }
};

double filter_check(const FactoredPOMDP& p, std::size_t depth) {
  const PathOracle oracle{p};
  double worst = 0.0;
  std::function<void(const FactoredBelief&, const std::vector<PathOracle::Path>&, std::size_t)> dfs =
      [&](const FactoredBelief& b, const std::vector<PathOracle::Path>& paths, std::size_t t) {
        worst = std::max(worst, tv(b.joint, oracle.posterior(paths)));
        if (t == depth) {
          return;
        }
        for (std::size_t a = 0; a < p.sizes.actions; ++a) {
          for (std::size_t o = 0; o < p.sizes.observations; ++o) {
            const auto next = oracle.extend(paths, a, o);
            if (next.empty()) {
              continue;
            }
            dfs(belief_update(p, b, a, o).belief, next, t + 1);
          }
        }
      };
  for (std::size_t o = 0; o < p.sizes.observations; ++o) {
    const auto paths = oracle.start(o);
    if (paths.empty()) {
      continue;
    }
    // Condition the prior on the first observation.
    std::vector<double> joint(p.joint_count());
    double total = 0.0;
    for (std::size_t j = 0; j < joint.size(); ++j) {
      joint[j] = p.initial_belief[j] * p.emit(j / p.sizes.noises, j % p.sizes.noises, o);
      total += joint[j];
    }
    for (auto& x : joint) {
      x /= total;
    }
    dfs(factorize_belief(joint, p.sizes.states, p.sizes.noises), paths, 0);
  }
  return worst;
}

double reward_invariance_check(const FactoredPOMDP& p, std::uint64_t seed) {
  CounterRng rng(seed, Stream::kProbe, 0x7e57);
  const auto S = p.sizes.states;
  const auto Z = p.sizes.noises;
  auto random_belief = [&] { return factorize_belief(rng.dirichlet_one(S * Z), S, Z); };
  // Same state marginal, fresh noise conditionals.
  auto perturb = [&](const FactoredBelief& b) {
    std::vector<double> joint(S * Z);
    for (std::size_t s = 0; s < S; ++s) {
      const auto cond = rng.dirichlet_one(Z);
      for (std::size_t z = 0; z < Z; ++z) {
        joint[s * Z + z] = b.state_marginal[s] * cond[z];
      }
    }
    return factorize_belief(joint, S, Z);
  };
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const auto b = random_belief();
    const auto next = random_belief();
    const auto a = rng.below(p.sizes.actions);
    const double r = belief_reward(p, b, a, next);
    worst = std::max(worst, std::abs(r - belief_reward(p, perturb(b), a, perturb(next))));
  }
  return worst;
}

// Finite-horizon expectimax over exact beliefs, memoized on (belief, steps to go).
double expectimax(const FactoredPOMDP& p, std::size_t horizon) {
  const auto S = p.sizes.states;
  const auto Z = p.sizes.noises;
  std::map<std::pair<std::string, std::size_t>, double> memo;
  std::function<double(const std::vector<double>&, std::size_t)> value = [&](const std::vector<double>& b,
                                                                             std::size_t h) -> double {
    if (h == 0) {
      return 0.0;
    }
    const auto key = std::make_pair(belief_key(b, 1e-12), h);
    if (const auto it = memo.find(key); it != memo.end()) {
      return it->second;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < p.sizes.actions; ++a) {
      double q = 0.0;
      for (std::size_t o = 0; o < p.sizes.observations; ++o) {
        std::vector<double> next(S * Z, 0.0);
        double po = 0.0;
        double reward = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          for (std::size_t z = 0; z < Z; ++z) {
            const double w = b[s * Z + z];
            if (w == 0.0) {
              continue;
            }
            for (std::size_t ns = 0; ns < S; ++ns) {
              for (std::size_t nz = 0; nz < Z; ++nz) {
                const double x = w * p.latent_transition(a, s, z, ns, nz) * p.emit(ns, nz, o);
                next[ns * Z + nz] += x;
                po += x;
                reward += x * p.reward_of(s, a, ns);
              }
            }
          }
        }
        if (po <= kImpossibleObservation) {
          continue;
        }
        for (auto& x : next) {
          x /= po;
        }
        q += reward + po * p.discount * value(next, h - 1);
      }
      best = std::max(best, q);
    }
    memo.emplace(key, best);
    return best;
  };
  return value(p.initial_belief, horizon);
}

}  // namespace

double mutual_information(std::span<const double> counts, std::size_t rows, std::size_t cols) {
  if (counts.size() != rows * cols) {
    throw InvalidArgument("mutual_information: table size does not match rows x cols");
  }
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0)) {
      throw InvalidArgument("mutual_information: counts must be nonnegative");
    }
    total += c;
  }
  if (!(total > 0.0)) {
    throw InvalidArgument("mutual_information: total count is zero");
  }
  std::vector<double> px(rows, 0.0), py(cols, 0.0);
  for (std::size_t x = 0; x < rows; ++x) {
    for (std::size_t y = 0; y < cols; ++y) {
      px[x] += counts[x * cols + y];
      py[y] += counts[x * cols + y];
    }
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < rows; ++x) {
    for (std::size_t y = 0; y < cols; ++y) {
      const double c = counts[x * cols + y];
      if (c > 0.0) {
        mi += c / total * std::log(c * total / (px[x] * py[y]));
      }
    }
  }
  return std::max(mi, 0.0);
}

FactoredPOMDP load_instance(const InstanceSpec& spec) {
  if (!spec.file.empty()) {
    return load_pomdp(spec.file);
  }
  if (spec.generator) {
    return generate_random(*spec.generator);
  }
  return make_fixture(spec.fixture, spec.fixture_seed);
}

void require_valid(const ExperimentConfig& c) {
  if (c.seeds.empty()) {
    throw InvalidArgument("config: seeds must be non-empty");
  }
  if (c.evaluation_episodes < 1 || c.probe_episodes < 1 || c.training_episodes < 1) {
    throw InvalidArgument("config: episode counts must be at least 1");
  }
  if (c.evaluation_horizon < 1 || c.probe_horizon < 1 || c.training_horizon < 1) {
    throw InvalidArgument("config: horizons must be at least 1");
  }
  if (c.state_codes < 1 || c.noise_codes < 1) {
    throw InvalidArgument("config: code counts must be at least 1");
  }
  if (!(c.training.step_size > 0.0)) {
    throw InvalidArgument("config: step_size must be positive");
  }
  if (!(c.alpha >= 0.0) || !(c.beta >= 0.0)) {
    throw InvalidArgument("config: alpha and beta must be nonnegative");
  }
}

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const auto j = json::parse(text);
    reject_unknown(j, {"instance", "learner", "training", "evaluation", "belief", "seeds", "output_dir"}, "config");
    if (j.contains("instance")) {
      const auto& in = j.at("instance");
      reject_unknown(in, {"fixture", "fixture_seed", "generator", "file"}, "instance");
      c.instance.fixture = in.value("fixture", c.instance.fixture);
      c.instance.fixture_seed = in.value("fixture_seed", c.instance.fixture_seed);
      if (in.contains("generator")) {
        c.instance.generator = generator_from_json(in.at("generator"));
      }
      if (in.contains("file")) {
        c.instance.file = in.at("file").get<std::string>();
      }
    }
    if (j.contains("learner")) {
      const auto& l = j.at("learner");
      reject_unknown(l, {"state_codes", "noise_codes", "alpha", "beta", "asymmetric"}, "learner");
      c.state_codes = l.value("state_codes", c.state_codes);
      c.noise_codes = l.value("noise_codes", c.noise_codes);
      c.alpha = l.value("alpha", c.alpha);
      c.beta = l.value("beta", c.beta);
      c.training.switches.asymmetric_emission = l.value("asymmetric", true);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown(t, {"step_size", "step_count", "episodes", "horizon", "use_reward_term", "use_kl_terms", "kl_order"},
                     "training");
      c.training.step_size = t.value("step_size", c.training.step_size);
      c.training.step_count = t.value("step_count", c.training.step_count);
      c.training_episodes = t.value("episodes", c.training_episodes);
      c.training_horizon = t.value("horizon", c.training_horizon);
      c.training.switches.use_reward_term = t.value("use_reward_term", true);
      c.training.switches.use_kl_terms = t.value("use_kl_terms", true);
      const auto order = t.value("kl_order", std::string("posterior_prior"));
      if (order == "posterior_prior") {
        c.training.switches.kl_order = KlOrder::kPosteriorPrior;
      } else if (order == "prior_posterior") {
        c.training.switches.kl_order = KlOrder::kPriorPosterior;
      } else {
        throw FormatError("kl_order must be 'posterior_prior' or 'prior_posterior'");
      }
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      reject_unknown(e, {"episodes", "horizon", "probe_episodes", "probe_horizon"}, "evaluation");
      c.evaluation_episodes = e.value("episodes", c.evaluation_episodes);
      c.evaluation_horizon = e.value("horizon", c.evaluation_horizon);
      c.probe_episodes = e.value("probe_episodes", c.probe_episodes);
      c.probe_horizon = e.value("probe_horizon", c.probe_horizon);
    }
    if (j.contains("belief")) {
      const auto& b = j.at("belief");
      reject_unknown(b, {"horizon_cap", "quantization", "node_limit"}, "belief");
      c.belief.horizon_cap = b.value("horizon_cap", c.belief.horizon_cap);
      c.belief.quantization = b.value("quantization", c.belief.quantization);
      c.belief.node_limit = b.value("node_limit", c.belief.node_limit);
    }
    if (j.contains("seeds")) {
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("output_dir")) {
      c.output_dir = j.at("output_dir").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed config: ") + e.what());
  }
  require_valid(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open config " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  json in;
  if (!c.instance.file.empty()) {
    in["file"] = c.instance.file.string();
  } else if (c.instance.generator) {
    const auto& g = *c.instance.generator;
    in["generator"] = {{"sizes",
                        {{"states", g.sizes.states},
                         {"noises", g.sizes.noises},
                         {"actions", g.sizes.actions},
                         {"observations", g.sizes.observations}}},
                       {"decomposition_class", std::string(1, to_char(g.decomposition_class))},
                       {"invertible", g.invertible},
                       {"seed", g.seed},
                       {"discount", g.discount}};
  } else {
    in["fixture"] = c.instance.fixture;
    in["fixture_seed"] = c.instance.fixture_seed;
  }
  j["instance"] = in;
  j["learner"] = {{"state_codes", c.state_codes},
                  {"noise_codes", c.noise_codes},
                  {"alpha", c.alpha},
                  {"beta", c.beta},
                  {"asymmetric", c.training.switches.asymmetric_emission}};
  j["training"] = {{"step_size", c.training.step_size},
                   {"step_count", c.training.step_count},
                   {"episodes", c.training_episodes},
                   {"horizon", c.training_horizon},
                   {"use_reward_term", c.training.switches.use_reward_term},
                   {"use_kl_terms", c.training.switches.use_kl_terms},
                   {"kl_order", c.training.switches.kl_order == KlOrder::kPosteriorPrior ? "posterior_prior"
                                                                                         : "prior_posterior"}};
  j["evaluation"] = {{"episodes", c.evaluation_episodes},
                     {"horizon", c.evaluation_horizon},
                     {"probe_episodes", c.probe_episodes},
                     {"probe_horizon", c.probe_horizon}};
  j["belief"] = {{"horizon_cap", c.belief.horizon_cap},
                 {"quantization", c.belief.quantization},
                 {"node_limit", c.belief.node_limit}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  return j.dump(2);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  require_valid(config);
  const auto p = load_instance(config.instance);
  ExperimentResult result;
  const auto bmdp = build_belief_mdp(p, config.belief);
  result.belief_optimum = belief_value(bmdp).values[bmdp.initial];

  for (const auto seed : config.seeds) {
    result.runs.push_back(
        run_seed(config, p, result.belief_optimum, seed, config.output_dir / ("seed_" + std::to_string(seed))));
  }

  auto column = [&](double MetricsRow::*field) {
    std::vector<double> v;
    for (const auto& r : result.runs) {
      v.push_back(r.row.*field);
    }
    return v;
  };
  result.mean.seed = "mean";
  result.std.seed = "std";
  for (auto field : {&MetricsRow::mi_s_hat_vs_s, &MetricsRow::mi_z_hat_vs_s, &MetricsRow::transition_residual,
                     &MetricsRow::reward_residual, &MetricsRow::value_gap, &MetricsRow::mean_return,
                     &MetricsRow::return_std}) {
    const auto v = column(field);
    result.mean.*field = mean_of(v);
    result.std.*field = sample_std(v);
  }

  auto out = open_output(config.output_dir / "metrics.csv");
  write_metrics_csv(out, result);
  return result;
}

void write_metrics_csv(std::ostream& out, const ExperimentResult& result) {
  out << "seed,mi_s_hat_vs_s,mi_z_hat_vs_s,transition_residual,reward_residual,value_gap,mean_return,return_std\n";
  for (const auto& r : result.runs) {
    write_row(out, r.row);
  }
  write_row(out, result.mean);
  write_row(out, result.std);
}

std::string_view to_string(AblationVariant v) noexcept {
  switch (v) {
    case AblationVariant::kFull:
      return "full";
    case AblationVariant::kSymmetric:
      return "symmetric";
    case AblationVariant::kNoReward:
      return "no_reward";
    case AblationVariant::kNoKl:
      return "no_kl";
  }
  return "?";
}

ExperimentConfig ablation_config(const ExperimentConfig& base, AblationVariant v) {
  auto c = base;
  c.training.switches.asymmetric_emission = v != AblationVariant::kSymmetric;
  c.training.switches.use_reward_term = v != AblationVariant::kNoReward;
  c.training.switches.use_kl_terms = v != AblationVariant::kNoKl;
  c.output_dir = base.output_dir / std::string(to_string(v));
  return c;
}

const ExperimentResult& AblationResult::at(AblationVariant v) const {
  for (const auto& [variant, result] : variants) {
    if (variant == v) {
      return result;
    }
  }
  throw InvalidArgument("ablation variant not present");
}

double median(std::vector<double> v) {
  if (v.empty()) {
    throw InvalidArgument("median of an empty set");
  }
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblationResult run_ablation_grid(const ExperimentConfig& config) {
  require_valid(config);
  AblationResult result;
  for (auto v : kAllAblationVariants) {
    result.variants.emplace_back(v, run_experiment(ablation_config(config, v)));
  }
  auto table = open_output(config.output_dir / "ablation.csv");
  write_ablation_csv(table, result);
  auto summary = open_output(config.output_dir / "ablation_summary.csv");
  write_ablation_summary_csv(summary, result);
  return result;
}

void write_ablation_csv(std::ostream& out, const AblationResult& result) {
  out << "variant,seed,mi_s_hat_vs_s,mi_z_hat_vs_s,mean_return,return_std,permutation_test,kl_columns_zero\n";
  for (const auto& [variant, r] : result.variants) {
    for (const auto& run : r.runs) {
      out << to_string(variant) << ',' << run.row.seed << ',' << format_double(run.row.mi_s_hat_vs_s) << ','
          << format_double(run.row.mi_z_hat_vs_s) << ',' << format_double(run.row.mean_return) << ','
          << format_double(run.row.return_std) << ',' << (run.permutation.passed ? "pass" : "fail") << ','
          << (run.kl_columns_zero ? "true" : "false") << '\n';
    }
  }
}

void write_ablation_summary_csv(std::ostream& out, const AblationResult& result) {
  out << "variant,median_mean_return,median_mi_s_hat_vs_s,median_mi_z_hat_vs_s\n";
  for (const auto& [variant, r] : result.variants) {
    std::vector<double> ret, ms, mz;
    for (const auto& run : r.runs) {
      ret.push_back(run.row.mean_return);
      ms.push_back(run.row.mi_s_hat_vs_s);
      mz.push_back(run.row.mi_z_hat_vs_s);
    }
    out << to_string(variant) << ',' << format_double(median(ret)) << ',' << format_double(median(ms)) << ','
        << format_double(median(mz)) << '\n';
  }
}

bool VerifyReport::passed() const noexcept { return failures() == 0; }

std::size_t VerifyReport::failures() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [](const VerifyCheck& c) { return !c.passed; }));
}

VerifyReport verify_suite(std::span<const std::string> fixtures, const VerifyTolerances& tol,
                          const VerifyOptions& options) {
  VerifyReport report;
  auto add = [&](const std::string& fixture, std::string name, double value, double tolerance,
                 std::string detail = {}) {
    report.checks.push_back({fixture, std::move(name), value, tolerance, value <= tolerance, std::move(detail)});
  };

  for (const auto& name : fixtures) {
    const auto fixture = fixture_from(name);
    const auto p = make_fixture(fixture);
    const auto validation = validate_pomdp(p);
    add(name, "validation", static_cast<double>(validation.violations.size()), 0.0, validation.summary());
    add(name, "filter_vs_path_enumeration", filter_check(p, options.filter_depth), tol.filter);
    add(name, "belief_reward_noise_invariance", reward_invariance_check(p, options.seed), tol.reward_invariance);

    if (p.invertible) {
      Tolerances t;
      t.transition = t.reward = t.ci = t.witness = tol.residual;
      t.seed = options.seed;
      const auto g = estimator_identity(p);
      add(name, "ground_truth_transition_residual", check_transition_preservation(p, g).residual, tol.residual);
      auto rewards = observation_reward_table(p);
      if (options.reward_fault && fixture == FixtureName::kTB1) {
        rewards.front() += *options.reward_fault;
      }
      add(name, "ground_truth_reward_residual", check_reward_preservation(rewards, p.sizes.actions, g).residual,
          tol.residual);
      const auto cert = certify_disentanglement(p, g, t);
      add(name, "ground_truth_certified", cert.verdict == Verdict::kCertified ? 0.0 : 1.0, 0.0,
          std::string(to_string(cert.verdict)));
      const auto swapped = certify_disentanglement(p, estimator_swap(p), t);
      add(name, "swap_estimator_refuted", swapped.verdict == Verdict::kRefuted ? 0.0 : 1.0, 0.0,
          std::string(to_string(swapped.verdict)));
      const auto mixed = certify_disentanglement(p, estimator_xor(p), t);
      add(name, "xor_estimator_refuted", mixed.verdict == Verdict::kRefuted ? 0.0 : 1.0, 0.0,
          std::string(to_string(mixed.verdict)));
    } else {
      const double q = 1e-4;
      const auto bmdp = build_belief_mdp(p, {8, q, 100'000});
      const double truth = check_belief_preservation(bmdp, factorizer_ground_truth(bmdp)).residual;
      const double swapped = check_belief_preservation(bmdp, factorizer_swapped(bmdp)).residual;
      const double bound = static_cast<double>(p.sizes.observations) * tol.belief_per_observation;
      add(name, "belief_preservation_ground_truth", truth, bound);
      // Passes when the swapped residual is at least `belief_separation` times the bound.
      const double floor = tol.belief_separation * std::max(truth, bound);
      add(name, "belief_preservation_swapped_separated", floor - swapped, 0.0,
          "swapped residual " + format_double(swapped));
    }

    if (fixture == FixtureName::kTB1) {
      const auto bmdp = build_belief_mdp(p, {});
      const double v = belief_value(bmdp).values[bmdp.initial];
      const double oracle = expectimax(p, options.value_horizon);
      const double slack = std::pow(p.discount, static_cast<double>(options.value_horizon)) * p.reward_bound /
                               (1.0 - p.discount) +
                           tol.value;
      add(name, "belief_value_vs_expectimax", std::abs(v - oracle), slack);
    }
  }
  return report;
}

std::string verify_report_json(const VerifyReport& report) {
  json j;
  j["passed"] = report.passed();
  j["failures"] = report.failures();
  auto checks = json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"fixture", c.fixture},
                      {"check", c.name},
                      {"value", c.value},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed},
                      {"detail", c.detail}});
  }
  j["checks"] = std::move(checks);
  return j.dump(2);
}

}  // namespace beliefid
