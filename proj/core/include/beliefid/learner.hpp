#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "beliefid/pomdp.hpp"

namespace beliefid {

struct LatentSizes {
  std::size_t state_codes = 0;  // K_s
  std::size_t noise_codes = 0;  // K_z
  std::size_t actions = 0;
  std::size_t observations = 0;
  /// Split of each observation into a channel-1 (state) and channel-2 (distractor) symbol.
  ObservationChannels channels;

  std::size_t codes() const noexcept { return state_codes * noise_codes; }
};

/// Every table is row-major; logit tables are softmaxed over their last index.
/// Code index c = i * K_z + j for state code i and noise code j.
struct ModelTables {
  std::vector<double> prior_state_initial;      // [i]
  std::vector<double> prior_state;              // [i][a][i']
  std::vector<double> prior_noise_initial;      // [j]
  std::vector<double> prior_noise;              // [j][j']
  std::vector<double> posterior_state_initial;  // [o][i]
  std::vector<double> posterior_state;          // [i][a][o'][j][i']
  std::vector<double> posterior_noise_initial;  // [o][j]
  std::vector<double> posterior_noise;          // [j][o'][i][a][j']
  std::vector<double> decoder_state;            // [i][c1] (asymmetric) or [c][c1]
  std::vector<double> decoder_noise;            // [j][c2] (asymmetric) or [c][c2]
  std::vector<double> reward_mean;              // [i][a][i'], not a logit table

  template <class F>
  void for_each(F&& f) {
    f("prior_state_initial", prior_state_initial);
    f("prior_state", prior_state);
    f("prior_noise_initial", prior_noise_initial);
    f("prior_noise", prior_noise);
    f("posterior_state_initial", posterior_state_initial);
    f("posterior_state", posterior_state);
    f("posterior_noise_initial", posterior_noise_initial);
    f("posterior_noise", posterior_noise);
    f("decoder_state", decoder_state);
    f("decoder_noise", decoder_noise);
    f("reward_mean", reward_mean);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelTables*>(this)->for_each(
        [&](const char* name, std::vector<double>& t) { f(name, static_cast<const std::vector<double>&>(t)); });
  }
};

/// Tabular dual-dynamics world model: a state chain and a noise chain with their
/// own priors, structured posteriors, decoders and a reward head on state codes.
struct LearnedWorldModel {
  LatentSizes sizes;
  /// Channel 1 decoded from i only and channel 2 from j only; otherwise both
  /// decoders read the joint code.
  bool asymmetric = true;
  double alpha = 1.0;
  double beta = 0.25;
  ModelTables params;
};

/// Tables with the shapes of `sizes`, all zero.
ModelTables zero_tables(const LatentSizes& sizes, bool asymmetric);

/// Logits and reward means drawn i.i.d. uniform in [-0.01, 0.01].
LearnedWorldModel init_model(const LatentSizes& sizes, std::uint64_t seed, bool asymmetric = true);

/// Sizes for a learner on `p` with the given code counts.
LatentSizes latent_sizes_for(const FactoredPOMDP& p, std::size_t state_codes, std::size_t noise_codes);

void require_valid(const LearnedWorldModel& model);

enum class KlOrder {
  kPosteriorPrior,  // KL(q || p)
  kPriorPosterior,  // KL(p || q)
};

struct ObjectiveSwitches {
  bool use_reward_term = true;
  bool use_kl_terms = true;
  bool asymmetric_emission = true;
  KlOrder kl_order = KlOrder::kPosteriorPrior;
};

/// Loss-side terms: total = recon_o + recon_r + alpha * kl_s + beta * kl_z = -ELBO.
/// Disabled terms are reported as 0.
struct ElboBreakdown {
  double total = 0.0;
  double recon_o = 0.0;
  double recon_r = 0.0;
  double kl_s = 0.0;
  double kl_z = 0.0;
};

/// Per-step code beliefs from the structured posterior.
struct CodeBelief {
  std::vector<double> state;  // q(i_t)
  std::vector<double> noise;  // q(j_t)
  std::vector<double> joint;  // q(i_t, j_t)
};

/// Runs the posterior forward over the first `length` observations of `episode`
/// (all T + 1 when length is 0), marginalizing previous codes exactly.
std::vector<CodeBelief> filter_posterior(const LearnedWorldModel& model, const Episode& episode,
                                         std::size_t length = 0);

/// Exact-expectation negative ELBO summed over time steps and episodes.
ElboBreakdown elbo(const LearnedWorldModel& model, std::span<const Episode> episodes,
                   const ObjectiveSwitches& switches = {});

/// Gradient of `elbo(...).total` with respect to every table entry.
ModelTables elbo_gradients(const LearnedWorldModel& model, std::span<const Episode> episodes,
                           const ObjectiveSwitches& switches = {}, ElboBreakdown* value = nullptr);

struct TrainingConfig {
  double step_size = 10.0;
  std::size_t step_count = 20000;
  std::uint64_t seed = 0;
  ObjectiveSwitches switches;
};

struct LossPoint {
  std::size_t step = 0;
  ElboBreakdown loss;  // per observation
};

struct TrainingResult {
  LearnedWorldModel model;
  std::vector<LossPoint> loss_curve;
  double final_step_size = 0.0;
  bool step_halved = false;
};

/// Full-batch gradient descent on the per-observation loss. Loss is recorded before
/// each update and once after the last. After 100 consecutive worsening steps the
/// step size is halved once; a second such run throws TrainingDiverged.
TrainingResult train(LearnedWorldModel model, std::span<const Episode> episodes, const TrainingConfig& config);

/// MDP over state codes: softmax(prior_state) transitions and reward-head means.
MDP extract_latent_mdp(const LearnedWorldModel& model, double discount);

/// Filters the observation stream with the posterior and acts greedily (w.r.t. the
/// optimal values of extract_latent_mdp) at the most likely state code.
std::shared_ptr<ObservationPolicy> make_greedy_policy(const LearnedWorldModel& model, double discount);

/// Argmax (i, j) code per time step along an episode.
std::vector<std::pair<std::size_t, std::size_t>> argmax_codes(const LearnedWorldModel& model,
                                                              const Episode& episode);

/// Relabels noise codes j -> perm[j] in priors and posteriors. Decoders are
/// relabeled only when `decoders` is set.
LearnedWorldModel relabel_noise_codes(const LearnedWorldModel& model, std::span<const std::size_t> perm,
                                      bool decoders);
/// Same for state codes, reward head included.
LearnedWorldModel relabel_state_codes(const LearnedWorldModel& model, std::span<const std::size_t> perm,
                                      bool decoders);

/// Expected channel-1 log-likelihood under the filtered posterior.
double channel1_log_likelihood(const LearnedWorldModel& model, std::span<const Episode> episodes);

struct PermutationTest {
  bool passed = true;
  /// Largest change of the channel-1 likelihood over noise-code permutations.
  double max_change = 0.0;
};

/// Permutes noise codes in the beliefs but not the decoders and checks that channel-1
/// reconstruction is unchanged. Holds by construction for asymmetric models.
PermutationTest emission_permutation_test(const LearnedWorldModel& model, std::span<const Episode> episodes,
                                          double tol = 1e-12);

std::string model_to_json(const LearnedWorldModel& model);
LearnedWorldModel model_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const LearnedWorldModel& model);
LearnedWorldModel load_model(const std::filesystem::path& path);

/// Header: step,total,recon_o,recon_r,kl_s,kl_z
void write_loss_csv(std::ostream& out, std::span<const LossPoint> curve);

}  // namespace beliefid
