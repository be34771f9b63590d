#include <beliefid/error.hpp>
#include <beliefid/identifiability.hpp>
#include <beliefid/learner.hpp>
#include <beliefid/rng.hpp>
#include <beliefid/solver.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

using namespace beliefid;

namespace {

std::vector<Episode> episodes(const FactoredPOMDP& p, std::size_t n, std::size_t horizon, std::uint64_t seed) {
  std::vector<Episode> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(sample_episode(p, StochasticPolicy::uniform(p.sizes.states, p.sizes.actions), horizon,
                                 episode_seed(seed, k)));
  }
  return out;
}

// Logits spread wider than the init range so every term is exercised.
LearnedWorldModel random_model(const LatentSizes& sizes, std::uint64_t seed, bool asymmetric = true) {
  auto m = init_model(sizes, seed, asymmetric);
  CounterRng rng(seed, Stream::kProbe, 99);
  m.params.for_each([&](const char*, std::vector<double>& t) {
    for (auto& x : t) x = rng.uniform(-1.5, 1.5);
  });
  return m;
}

}  // namespace

TEST_CASE("init_model") {
  const LatentSizes sizes{2, 2, 2, 4, {2, 2}};
  const auto a = init_model(sizes, 0);
  const auto b = init_model(sizes, 0);
  CHECK(model_to_json(a) == model_to_json(b));
  CHECK(model_to_json(a) != model_to_json(init_model(sizes, 1)));
  a.params.for_each([](const char* name, const std::vector<double>& t) {
    CAPTURE(name);
    for (double x : t) CHECK(std::abs(x) <= 0.01);
  });
  // softmax of logits in [-0.01, 0.01] stays within 0.01 of uniform
  const auto& row = a.params.prior_state;
  for (std::size_t r = 0; r < row.size() / 2; ++r) {
    const double p0 = 1.0 / (1.0 + std::exp(row[2 * r + 1] - row[2 * r]));
    CHECK(std::abs(p0 - 0.5) <= 0.01);
  }
  CHECK_THROWS_AS(init_model({0, 2, 2, 4, {2, 2}}, 0), InvalidArgument);
  CHECK_THROWS_AS(init_model({2, 2, 2, 4, {3, 2}}, 0), InvalidArgument);
}

TEST_CASE("filter_posterior") {
  const auto p = make_fixture("TB2");
  const auto data = episodes(p, 3, 4, 5);
  SUBCASE("single code") {
    const auto m = init_model({1, 1, 2, 4, {2, 2}}, 0);
    for (const auto& b : filter_posterior(m, data[0])) CHECK(b.joint == std::vector<double>{1.0});
  }
  SUBCASE("uniform logits keep uniform beliefs") {
    LearnedWorldModel m;
    m.sizes = {3, 2, 2, 4, {2, 2}};
    m.params = zero_tables(m.sizes, true);
    for (const auto& b : filter_posterior(m, data[1]))
      for (double x : b.joint) CHECK(x == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  }
  SUBCASE("matches code path enumeration") {
    for (bool asym : {true, false}) {
      const auto m = random_model({3, 2, 2, 4, {2, 2}}, 4, asym);
      for (const auto& ep : data) {
        const auto beliefs = filter_posterior(m, ep);
        const auto ref = oracle::enumerate_code_paths(m, ep);
        REQUIRE(beliefs.size() == ref.marginals.size());
        for (std::size_t t = 0; t < beliefs.size(); ++t) {
          for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(beliefs[t].joint[c] - ref.marginals[t][c]) <= 1e-10);
          for (std::size_t i = 0; i < 3; ++i)
            CHECK(beliefs[t].state[i] == doctest::Approx(ref.marginals[t][2 * i] + ref.marginals[t][2 * i + 1]));
        }
        CHECK(filter_posterior(m, ep, 2).size() == 2);
      }
    }
  }
}

TEST_CASE("elbo against code path enumeration") {
  const auto p = make_fixture("TB2");
  const auto data = episodes(p, 4, 4, 9);
  for (bool asym : {true, false}) {
    CAPTURE(asym);
    auto m = random_model({3, 2, 2, 4, {2, 2}}, 17, asym);
    m.alpha = 1.0;
    m.beta = 1.0;
    ObjectiveSwitches sw;
    sw.asymmetric_emission = asym;
    double total = 0.0, loglik = 0.0;
    ElboBreakdown ref;
    for (const auto& ep : data) {
      const auto r = oracle::enumerate_code_paths(m, ep);
      total -= r.elbo;
      loglik += r.log_likelihood;
      ref.recon_o += r.recon_o;
      ref.recon_r += r.recon_r;
      ref.kl_s += r.kl_s;
      ref.kl_z += r.kl_z;
    }
    const auto e = elbo(m, data, sw);
    CHECK(e.total == doctest::Approx(total).epsilon(1e-12));
    CHECK(e.recon_o == doctest::Approx(ref.recon_o).epsilon(1e-12));
    CHECK(e.recon_r == doctest::Approx(ref.recon_r).epsilon(1e-12));
    CHECK(e.kl_s == doctest::Approx(ref.kl_s).epsilon(1e-12));
    CHECK(e.kl_z == doctest::Approx(ref.kl_z).epsilon(1e-12));
    // bound: -loss <= log-likelihood
    CHECK(-e.total <= loglik + 1e-8);

    // alpha and beta only reweight the KL terms
    m.alpha = 2.0;
    m.beta = 0.25;
    const auto w = elbo(m, data, sw);
    CHECK(w.total == doctest::Approx(ref.recon_o + ref.recon_r + 2.0 * ref.kl_s + 0.25 * ref.kl_z).epsilon(1e-12));

    sw.use_kl_terms = false;
    const auto nk = elbo(m, data, sw);
    CHECK(nk.kl_s == 0.0);
    CHECK(nk.kl_z == 0.0);
    CHECK(nk.total == doctest::Approx(ref.recon_o + ref.recon_r).epsilon(1e-12));
    sw.use_kl_terms = true;
    sw.use_reward_term = false;
    CHECK(elbo(m, data, sw).recon_r == 0.0);
  }
  CHECK_THROWS_AS(elbo(init_model({2, 2, 2, 4, {2, 2}}, 0), std::span<const Episode>{}), InvalidArgument);
}

TEST_CASE("closed-form KL values") {
  // posterior equal to prior, point masses: both KL terms vanish
  auto m = oracle::tb1_exact_model();
  const auto data = episodes(make_fixture("TB1"), 1, 1, 0);
  auto same = m;
  const double ninf = -std::numeric_limits<double>::infinity();
  // first step only: prior on codes = point mass on (s(o0), z(o0)) matches the posterior
  const auto o0 = data[0].observation_at(0);
  for (std::size_t k = 0; k < 2; ++k) {
    same.params.prior_state_initial[k] = k == o0 / 2 ? 0.0 : ninf;
    same.params.prior_noise_initial[k] = k == o0 % 2 ? 0.0 : ninf;
  }
  Episode single = data[0];
  single.steps.clear();
  single.final_observation = o0;
  const auto e = elbo(same, std::span<const Episode>(&single, 1));
  CHECK(e.kl_s == 0.0);
  CHECK(e.kl_z == 0.0);
  // posterior (1, 0) against prior (1/2, 1/2): ln 2
  const auto f = elbo(m, std::span<const Episode>(&single, 1));
  CHECK(f.kl_s == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(f.kl_z == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("exact TB1 model: loss equals the data likelihood") {
  const auto p = make_fixture("TB1");
  const auto m = oracle::tb1_exact_model();
  for (std::size_t horizon = 1; horizon <= 5; ++horizon) {
    const auto data = episodes(p, 6, horizon, 100 + horizon);
    for (const auto& ep : data) {
      const auto e = elbo(m, std::span<const Episode>(&ep, 1));
      const double reward_ll = -static_cast<double>(ep.horizon()) * 0.5 * std::log(2.0 * M_PI);
      CHECK(std::abs(-e.total - (oracle::pomdp_log_likelihood(p, ep) + reward_ll)) <= 1e-8);
      CHECK(e.recon_o == 0.0);
    }
  }
}

TEST_CASE("elbo_gradients") {
  const auto p = make_fixture("TB2");
  const auto data = episodes(p, 3, 4, 21);
  SUBCASE("central differences") {
    for (bool asym : {true, false}) {
      const auto m = random_model({3, 2, 2, 4, {2, 2}}, 23, asym);
      ObjectiveSwitches sw;
      sw.asymmetric_emission = asym;
      for (auto order : {KlOrder::kPosteriorPrior, KlOrder::kPriorPosterior}) {
        sw.kl_order = order;
        const auto audit = oracle::audit_gradients(m, data, sw, 1e-5, 1e-3);
        CHECK(audit.max_relative_error <= 1e-5);
        CHECK(audit.entries > 300);
      }
    }
  }
  SUBCASE("reward switch zeroes reward-head gradients") {
    const auto m = random_model({3, 2, 2, 4, {2, 2}}, 2);
    ObjectiveSwitches sw;
    sw.use_reward_term = false;
    for (double g : elbo_gradients(m, data, sw).reward_mean) CHECK(g == 0.0);
    sw.use_reward_term = true;
    sw.use_kl_terms = false;
    for (double g : elbo_gradients(m, data, sw).prior_state) CHECK(g == 0.0);
  }
  SUBCASE("value out-parameter equals elbo") {
    const auto m = random_model({3, 2, 2, 4, {2, 2}}, 3);
    ElboBreakdown v;
    (void)elbo_gradients(m, data, {}, &v);
    CHECK(v.total == doctest::Approx(elbo(m, data).total).epsilon(1e-14));
  }
  SUBCASE("symmetric data and init give mirrored gradients") {
    // mirror noise: swapping z in the data and the noise codes in the model
    LearnedWorldModel m;
    m.sizes = {2, 2, 2, 4, {2, 2}};
    m.params = zero_tables(m.sizes, true);
    std::vector<Episode> mirrored = data;
    for (auto& ep : mirrored) {
      for (auto& st : ep.steps) st.observation ^= 1;
      ep.final_observation ^= 1;
    }
    std::vector<Episode> both = data;
    both.insert(both.end(), mirrored.begin(), mirrored.end());
    const auto g = elbo_gradients(m, both);
    // decoder_noise[j][c2] == decoder_noise[1-j][1-c2]
    CHECK(g.decoder_noise[0] == doctest::Approx(g.decoder_noise[3]).epsilon(1e-12));
    CHECK(g.decoder_noise[1] == doctest::Approx(g.decoder_noise[2]).epsilon(1e-12));
    CHECK(g.prior_noise[0] == doctest::Approx(g.prior_noise[3]).epsilon(1e-12));
  }
}

TEST_CASE("structural asymmetry") {
  const auto p = make_fixture("TB2");
  const auto data = episodes(p, 3, 5, 8);
  const auto m = random_model({3, 2, 2, 4, {2, 2}}, 8);
  CHECK(emission_permutation_test(m, data).passed);
  const auto sym = random_model({3, 2, 2, 4, {2, 2}}, 8, false);
  const auto st = emission_permutation_test(sym, data);
  CHECK_FALSE(st.passed);
  CHECK(st.max_change > 1e-6);

  // the mean-field noise prior ignores state codes: permuting them leaves kl_z unchanged
  const std::vector<std::size_t> perm{2, 0, 1};
  const auto relabeled = relabel_state_codes(m, perm, true);
  CHECK(elbo(relabeled, data).kl_z == doctest::Approx(elbo(m, data).kl_z).epsilon(1e-12));
  CHECK(elbo(relabeled, data).total == doctest::Approx(elbo(m, data).total).epsilon(1e-12));
  const std::vector<std::size_t> zperm{1, 0};
  CHECK(elbo(relabel_noise_codes(m, zperm, true), data).total == doctest::Approx(elbo(m, data).total).epsilon(1e-12));
}

TEST_CASE("train") {
  const auto p = make_fixture("GRIDNOISE", 0);
  const auto data = episodes(p, 8, 10, 1);
  const auto m = init_model(latent_sizes_for(p, 4, 3), 5);
  TrainingConfig cfg;
  cfg.step_count = 60;
  const auto a = train(m, data, cfg);
  const auto b = train(m, data, cfg);
  REQUIRE(a.loss_curve.size() == 61);
  for (std::size_t k = 0; k < a.loss_curve.size(); ++k) CHECK(a.loss_curve[k].loss.total == b.loss_curve[k].loss.total);
  CHECK(a.loss_curve.back().loss.total < a.loss_curve.front().loss.total);
  CHECK(model_to_json(a.model) == model_to_json(b.model));

  TrainingConfig wild = cfg;
  wild.step_size = 1e6;
  wild.step_count = 400;
  CHECK_THROWS_AS(train(m, data, wild), TrainingDiverged);
  TrainingConfig bad = cfg;
  bad.step_size = 0.0;
  CHECK_THROWS_AS(train(m, data, bad), InvalidArgument);

  std::ostringstream out;
  write_loss_csv(out, a.loss_curve);
  CHECK(out.str().rfind("step,total,recon_o,recon_r,kl_s,kl_z\n0,", 0) == 0);
}

TEST_CASE("exact TB1 model yields a latent MDP equivalent to TB1") {
  const auto p = make_fixture("TB1");
  const auto lm = extract_latent_mdp(oracle::tb1_exact_model(), p.discount);
  const auto w = find_witness_bijection(lm, underlying_mdp(p), 1e-12);
  REQUIRE(w.witness);
  CHECK(*w.witness == std::vector<std::size_t>{0, 1});

  // greedy play from the exact model reaches the optimum after the first step
  auto policy = make_greedy_policy(oracle::tb1_exact_model(), p.discount);
  const auto ep = sample_episode(p, policy, 20, 3);
  for (std::size_t t = 1; t < ep.horizon(); ++t) CHECK(ep.steps[t].reward == 1.0);

  const auto codes = argmax_codes(oracle::tb1_exact_model(), ep);
  for (std::size_t t = 0; t <= ep.horizon(); ++t) {
    CHECK(codes[t].first == ep.state_at(t));
    CHECK(codes[t].second == ep.noise_at(t));
  }
}

TEST_CASE("model checkpoint round trip") {
  const auto m = random_model({4, 3, 2, 12, {4, 3}}, 31);
  const auto dir = std::filesystem::temp_directory_path() / "beliefid_test_model";
  save_model(dir / "m.json", m);
  const auto back = load_model(dir / "m.json");
  CHECK(model_to_json(back) == model_to_json(m));
  std::size_t k = 0;
  std::vector<const std::vector<double>*> tables;
  m.params.for_each([&](const char*, const std::vector<double>& t) { tables.push_back(&t); });
  back.params.for_each([&](const char*, const std::vector<double>& t) { CHECK(t == *tables[k++]); });
  auto exact = oracle::tb1_exact_model();
  CHECK(model_to_json(model_from_json(model_to_json(exact))) == model_to_json(exact));
  CHECK_THROWS_AS(model_from_json("[1,2]"), FormatError);
}
