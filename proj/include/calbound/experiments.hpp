#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calbound/bounds.hpp"
#include "calbound/model.hpp"
#include "calbound/synthdata.hpp"
#include "calbound/trainer.hpp"

namespace calbound::experiments {

inline constexpr const char* kVersionTag = "calbound-0.1.0";

enum class Aggregator { minmax_mean, raw_sum, zscore_mean };

std::string aggregator_name(Aggregator a);
Aggregator aggregator_from_name(const std::string& name);

// Grid x seeds sweep over the regularization coefficients.
struct SweepSpec {
  std::vector<double> lambda_oc_grid;
  std::vector<double> lambda_sd_grid;
  trainer::SdMode sd_mode = trainer::SdMode::ban;
  std::vector<std::uint64_t> seeds;
  trainer::TrainConfig base_config;
  synthdata::ShiftSpec shift_spec;
  model::MlpShape shape;
  std::size_t n_bins = 15;
  std::size_t jobs = 1;
  Aggregator aggregator = Aggregator::minmax_mean;

  void validate() const;
  static SweepSpec defaults(std::uint64_t base_seed);
  // d = 100, N = 1000 profile for quick runs.
  static SweepSpec small(std::uint64_t base_seed);
};

struct SweepRow {
  std::size_t grid_index = 0;
  double lambda_oc = 0.0;
  double lambda_sd = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  bounds::BoundReport report;
};

struct CorrelationSummary {
  double r_rhs_ood_ece = 0.0;
  double r_rhs_ood_mse = 0.0;
  double r_rhs_lhs_cls = 0.0;
  double r_rhs_lhs_cal = 0.0;
  std::size_t rows_used = 0;
  std::size_t rows_flagged = 0;
};

// Best value per metric within one regularization regime.
struct RegimeBest {
  double best_sigma_min = 0.0;  // max
  double best_id_ece = 0.0;     // min
  double best_ood_mse = 0.0;    // min
  double best_ood_ece = 0.0;    // min
  std::size_t cells = 0;
};

using RegimeBestTable = std::map<std::string, RegimeBest>;  // baseline/oc/sd/both

struct SweepResult {
  std::vector<SweepRow> rows;
  CorrelationSummary correlations;
  std::map<std::uint64_t, RegimeBestTable> regime_best_per_seed;
};

// Trains every grid x seed cell (skipping cells already cached in
// out_dir/cells by content hash), evaluates both bound sides, recomputes the
// population rhs_proxy with the configured aggregator, and writes sweep.csv,
// regime_best.csv and manifest.json. Per-cell failures are flagged in the
// output instead of aborting the sweep.
SweepResult run_bound_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir);

struct AblationSpec {
  double lambda_oc = 0.1;
  double lambda_sd = 1.0;
  std::vector<std::uint64_t> seeds;
  trainer::TrainConfig base_config;
  synthdata::ShiftSpec shift_spec;
  model::MlpShape shape;
  std::size_t n_bins = 15;
  std::size_t jobs = 1;

  static AblationSpec defaults(std::uint64_t base_seed);
  static AblationSpec small(std::uint64_t base_seed);
};

struct RegimeStats {
  std::string regime;
  std::size_t n = 0;
  double sigma_min_mean = 0.0, sigma_min_stderr = 0.0;
  double id_ece_mean = 0.0, id_ece_stderr = 0.0;
  double ood_mse_mean = 0.0, ood_mse_stderr = 0.0;
  double ood_ece_mean = 0.0, ood_ece_stderr = 0.0;
  double id_accuracy_mean = 0.0, ood_accuracy_mean = 0.0;
};

struct AblationResult {
  std::vector<RegimeStats> regimes;                       // baseline, sd, oc, both
  std::map<std::uint64_t, std::map<std::string, bounds::BoundReport>> per_seed;
};

// The four-regime comparison at fixed coefficients; writes regimes.csv.
AblationResult run_ablation(const AblationSpec& spec, const std::filesystem::path& out_dir);

struct SpectrumSpec {
  trainer::TrainConfig config;  // lambda_oc is the constrained arm's strength
  synthdata::ShiftSpec shift_spec;
  std::size_t k = 20;
  std::size_t projection_rank = 32;

  static SpectrumSpec defaults(std::uint64_t seed);
  static SpectrumSpec small(std::uint64_t seed);
};

struct SpectrumResult {
  std::vector<double> unconstrained;  // last k singular values, ascending position
  std::vector<double> constrained;
  double frob_gap_unconstrained = 0.0;  // ‖W_vᵀW_v − I‖_F after training
  double frob_gap_constrained = 0.0;
};

// Trains the tower pair with and without the orthogonality constraint on
// identical seeds and reports the last k singular values of the standardized
// projected image covariance; writes spectrum.csv.
SpectrumResult run_spectrum_study(const SpectrumSpec& spec,
                                  const std::filesystem::path& out_dir);

struct SvdAlternativeSpec {
  trainer::TrainConfig base_config;
  double lambda_oc = 0.1;
  double lambda_svd = 1.0;
  synthdata::ShiftSpec shift_spec;
  std::size_t projection_rank = 32;
  std::size_t n_bins = 15;

  static SvdAlternativeSpec defaults(std::uint64_t seed);
  static SvdAlternativeSpec small(std::uint64_t seed);
};

struct SvdAlternativeArm {
  std::string arm;  // baseline / oc / svd
  double sigma_min = 0.0;
  double id_retrieval_accuracy = 0.0, id_retrieval_ece = 0.0;
  double ood_retrieval_accuracy = 0.0, ood_retrieval_ece = 0.0;
  double frob_gap = 0.0;
  double mean_step_ms = 0.0;  // reported in timing.json, not the CSV
  std::size_t svd_fallback_steps = 0;
};

struct SvdAlternativeResult {
  std::vector<SvdAlternativeArm> arms;
};

// Direct -sigma_min penalty vs the orthogonality constraint vs baseline;
// writes svd_alternative.csv plus timing.json.
SvdAlternativeResult run_svd_alternative(const SvdAlternativeSpec& spec,
                                         const std::filesystem::path& out_dir);

struct PosthocSpec {
  std::vector<std::uint64_t> seeds;
  trainer::TrainConfig base_config;
  double lambda_sd = 1.0;      // EMA self-distillation arm strength
  double ls_epsilon = 0.1;     // label-smoothing arm
  synthdata::ShiftSpec shift_spec;
  model::MlpShape shape;
  std::size_t n_bins = 15;
  std::vector<double> wise_coeffs;  // interpolation grid toward the trained params
  std::size_t jobs = 1;

  static PosthocSpec defaults(std::uint64_t base_seed);
  static PosthocSpec small(std::uint64_t base_seed);
};

struct PosthocRow {
  std::uint64_t seed = 0;
  std::string arm;         // baseline / ls / ema_sd
  std::string adjustment;  // raw / ts / wise
  double parameter = 0.0;  // tau for ts, coefficient for wise
  double id_accuracy = 0.0, id_ece = 0.0;
  double ood_accuracy = 0.0, ood_ece = 0.0, ood_mse = 0.0;
};

struct PosthocResult {
  std::vector<PosthocRow> rows;
};

// Train-time arms (baseline, label smoothing, EMA self-distillation), each
// also reported with temperature scaling and the best weight interpolation
// against the initial parameters; writes posthoc.csv.
PosthocResult run_posthoc_suite(const PosthocSpec& spec, const std::filesystem::path& out_dir);

// Canonical JSON echoes used in manifests and cell hashing.
std::string train_config_to_json(const trainer::TrainConfig& config);
trainer::TrainConfig train_config_from_json(const std::string& text);

}  // namespace calbound::experiments
