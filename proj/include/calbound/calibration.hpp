#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace calbound::calibration {

struct BinStat {
  double lo = 0.0, hi = 0.0;  // right-closed bin (lo, hi]
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct BrierDecomposition {
  double classification_error = 0.0;  // E[(h - y)^2]
  double calibration_error = 0.0;     // E[(h - c)^2]
  double sharpness = 0.0;             // E[c^2]
  double base_rate = 0.0;             // E[y]
};

struct CalibrationReport {
  std::size_t n_bins = 0;
  std::vector<BinStat> bins;
  double ece = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  BrierDecomposition brier;  // of (confidence, correctness), binned grouping
};

// Uniform-width right-closed bins over [0,1]; empty bins contribute zero.
// Throws EmptyInput on an empty sample.
CalibrationReport ece_report(const std::vector<double>& confidences,
                             const std::vector<int>& correctness, std::size_t n_bins);

double ece(const std::vector<double>& confidences, const std::vector<int>& correctness,
           std::size_t n_bins);

std::vector<BinStat> reliability_bins(const std::vector<double>& confidences,
                                      const std::vector<int>& correctness, std::size_t n_bins);

// How samples are grouped when estimating c(x) = E[y | h(x)].
struct Grouping {
  enum class Kind { exact, binned } kind = Kind::binned;
  std::size_t bins = 15;

  static Grouping exact() { return {Kind::exact, 0}; }
  static Grouping binned(std::size_t m) { return {Kind::binned, m}; }
};

// Exact grouping when probabilities (quantized to 1e-6) take <= 256 distinct
// values, else binned(15).
Grouping auto_grouping(const std::vector<double>& probs);

// Group-wise estimate of c(x) for every sample.
std::vector<double> group_calibrated_values(const std::vector<double>& probs,
                                            const std::vector<int>& labels,
                                            const Grouping& grouping);

// With exact grouping the identity
//   E[(h-y)^2] = E[(h-c)^2] + E[y] - E[c^2]
// holds to numerical precision for binary labels.
BrierDecomposition brier_decomposition(const std::vector<double>& probs,
                                       const std::vector<int>& labels, const Grouping& grouping);

struct TemperatureFit {
  double tau = 1.0;
  double scaled_ece = 0.0;
  double raw_ece = 0.0;
};

// Grid search for the ECE-minimizing temperature; dividing logits by tau > 0
// never changes the predicted label. Ties break toward tau = 1.
TemperatureFit fit_temperature(const std::vector<double>& logits, const std::vector<int>& labels,
                               const std::vector<double>& grid, std::size_t n_bins = 15);

// 33 log-spaced points spanning [0.25, 4]; the midpoint is exactly 1.
std::vector<double> default_temperature_grid();

// Binary argmax conventions: confidence = max(h, 1-h), prediction = h >= 0.5.
double binary_confidence(double prob);
int binary_prediction(double prob);

void confidence_correctness(const std::vector<double>& probs, const std::vector<int>& labels,
                            std::vector<double>& confidences, std::vector<int>& correctness);

// CSV columns: bin_lo, bin_hi, count, conf, acc.
void save_reliability_csv(const std::filesystem::path& path, const std::vector<BinStat>& bins);

}  // namespace calbound::calibration
