#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beliefid/belief.hpp"
#include "beliefid/learner.hpp"
#include "beliefid/pomdp.hpp"

namespace beliefid {

/// Plug-in mutual information (nats) of a rows x cols table of counts.
double mutual_information(std::span<const double> joint_counts, std::size_t rows, std::size_t cols);

/// Where the POMDP of an experiment comes from: a file, a generator spec, or a fixture.
struct InstanceSpec {
  std::string fixture = "GRIDNOISE";
  std::uint64_t fixture_seed = 0;
  std::optional<GeneratorSpec> generator;
  std::filesystem::path file;
};

FactoredPOMDP load_instance(const InstanceSpec& spec);

struct ExperimentConfig {
  InstanceSpec instance;
  std::size_t state_codes = 4;
  std::size_t noise_codes = 3;
  double alpha = 1.0;
  double beta = 0.25;
  TrainingConfig training;
  std::size_t training_episodes = 64;
  std::size_t training_horizon = 20;
  std::size_t evaluation_episodes = 100;
  std::size_t evaluation_horizon = 50;
  std::size_t probe_episodes = 50;
  std::size_t probe_horizon = 50;
  BeliefMdpOptions belief;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "out";
};

/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);
void require_valid(const ExperimentConfig& config);

struct MetricsRow {
  std::string seed;  // seed value, or "mean" / "std" for aggregates
  double mi_s_hat_vs_s = 0.0;
  double mi_z_hat_vs_s = 0.0;
  double transition_residual = 0.0;  // nan when the emission is not invertible
  double reward_residual = 0.0;      // nan when the emission is not invertible
  double value_gap = 0.0;
  double mean_return = 0.0;
  double return_std = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  MetricsRow row;
  PermutationTest permutation;
  /// Every kl_s and kl_z entry of the loss curve is exactly 0.
  bool kl_columns_zero = false;
  ElboBreakdown final_loss;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  MetricsRow mean;
  MetricsRow std;  // sample standard deviation, 0 for a single seed
  double belief_optimum = 0.0;
};

/// Trains, evaluates and checks one learner per seed; writes per-seed artifacts under
/// output_dir/seed_<s>/ and the metrics table to output_dir/metrics.csv.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Header is the MetricsRow field order; aggregate rows follow the per-seed rows.
void write_metrics_csv(std::ostream& out, const ExperimentResult& result);

enum class AblationVariant { kFull, kSymmetric, kNoReward, kNoKl };
inline constexpr AblationVariant kAllAblationVariants[] = {AblationVariant::kFull, AblationVariant::kSymmetric,
                                                           AblationVariant::kNoReward, AblationVariant::kNoKl};
std::string_view to_string(AblationVariant v) noexcept;

/// The base config with the variant's switches applied and output_dir/<variant>.
ExperimentConfig ablation_config(const ExperimentConfig& base, AblationVariant v);

struct AblationResult {
  std::vector<std::pair<AblationVariant, ExperimentResult>> variants;

  const ExperimentResult& at(AblationVariant v) const;
};

double median(std::vector<double> values);

/// Runs every variant on the same seeds; writes output_dir/ablation.csv and
/// output_dir/ablation_summary.csv next to the per-variant directories.
AblationResult run_ablation_grid(const ExperimentConfig& config);

void write_ablation_csv(std::ostream& out, const AblationResult& result);
void write_ablation_summary_csv(std::ostream& out, const AblationResult& result);

struct VerifyTolerances {
  double filter = 1e-10;
  double reward_invariance = 1e-12;
  double residual = 1e-9;
  /// Ground-truth belief-preservation residual allowed per observation symbol.
  double belief_per_observation = 1e-4;
  double belief_separation = 10.0;
  double value = 1e-6;

  static VerifyTolerances zero() { return {0.0, 0.0, 0.0, 0.0, 10.0, 0.0}; }
};

struct VerifyOptions {
  /// Added to the first entry of TB1's observation-level reward table after validation.
  std::optional<double> reward_fault;
  std::size_t filter_depth = 3;
  std::size_t value_horizon = 30;
  std::uint64_t seed = 0;
};

struct VerifyCheck {
  std::string fixture;
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;

  bool passed() const noexcept;
  std::size_t failures() const noexcept;
};

/// Runs the identifiability and belief invariants on the named fixtures.
VerifyReport verify_suite(std::span<const std::string> fixtures, const VerifyTolerances& tol = {},
                          const VerifyOptions& options = {});
std::string verify_report_json(const VerifyReport& report);

}  // namespace beliefid
