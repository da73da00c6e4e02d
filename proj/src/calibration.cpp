#include "calbound/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "calbound/csv.hpp"
#include "calbound/error.hpp"

namespace calbound::calibration {

namespace {

// Right-closed uniform bins: confidence c maps to (lo, hi] with index
// ceil(c*M)-1; c == 0 falls into the first bin.
std::size_t bin_index(double c, std::size_t m) {
  if (c <= 0.0) return 0;
  const auto idx = static_cast<long long>(std::ceil(c * static_cast<double>(m))) - 1;
  if (idx < 0) return 0;
  if (idx >= static_cast<long long>(m)) return m - 1;
  return static_cast<std::size_t>(idx);
}

std::int64_t quantize(double p) { return std::llround(p * 1e6); }

// Neumaier compensated accumulator; keeps bin means exact for hand-checkable
// inputs.
struct KahanSum {
  double sum = 0.0;
  double compensation = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) {
      compensation += (sum - t) + x;
    } else {
      compensation += (x - t) + sum;
    }
    sum = t;
  }

  double value() const { return sum + compensation; }
};

}  // namespace

CalibrationReport ece_report(const std::vector<double>& confidences,
                             const std::vector<int>& correctness, std::size_t n_bins) {
  if (confidences.empty()) throw EmptyInput("ece over empty sample");
  if (confidences.size() != correctness.size()) throw ShapeMismatch("ece input lengths");
  if (n_bins == 0) throw InvalidSpec("n_bins must be positive");

  CalibrationReport report;
  report.n_bins = n_bins;
  report.bins.resize(n_bins);
  std::vector<KahanSum> conf_sum(n_bins);
  std::vector<double> correct_sum(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);

  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const std::size_t b = bin_index(confidences[i], n_bins);
    counts[b] += 1;
    conf_sum[b].add(confidences[i]);
    correct_sum[b] += correctness[i] ? 1.0 : 0.0;
  }

  const double n = static_cast<double>(confidences.size());
  KahanSum ece_sum;
  KahanSum total_conf;
  double total_correct = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    BinStat& bin = report.bins[b];
    bin.lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = counts[b];
    if (counts[b] > 0) {
      bin.mean_confidence = conf_sum[b].value() / static_cast<double>(counts[b]);
      bin.accuracy = correct_sum[b] / static_cast<double>(counts[b]);
      ece_sum.add((static_cast<double>(counts[b]) / n) *
                  std::fabs(bin.accuracy - bin.mean_confidence));
    }
    total_conf.add(conf_sum[b].value());
    total_correct += correct_sum[b];
  }
  report.ece = ece_sum.value();
  report.mean_confidence = total_conf.value() / n;
  report.accuracy = total_correct / n;

  std::vector<int> correct01(correctness.size());
  for (std::size_t i = 0; i < correctness.size(); ++i) correct01[i] = correctness[i] ? 1 : 0;
  report.brier = brier_decomposition(confidences, correct01, Grouping::binned(n_bins));
  return report;
}

double ece(const std::vector<double>& confidences, const std::vector<int>& correctness,
           std::size_t n_bins) {
  return ece_report(confidences, correctness, n_bins).ece;
}

std::vector<BinStat> reliability_bins(const std::vector<double>& confidences,
                                      const std::vector<int>& correctness, std::size_t n_bins) {
  return ece_report(confidences, correctness, n_bins).bins;
}

Grouping auto_grouping(const std::vector<double>& probs) {
  std::map<std::int64_t, bool> seen;
  for (double p : probs) {
    seen[quantize(p)] = true;
    if (seen.size() > 256) return Grouping::binned(15);
  }
  return Grouping::exact();
}

std::vector<double> group_calibrated_values(const std::vector<double>& probs,
                                            const std::vector<int>& labels,
                                            const Grouping& grouping) {
  if (probs.empty()) throw EmptyInput("grouping over empty sample");
  if (probs.size() != labels.size()) throw ShapeMismatch("probs/labels lengths");

  std::vector<double> c(probs.size(), 0.0);
  if (grouping.kind == Grouping::Kind::exact) {
    std::map<std::int64_t, std::pair<double, std::size_t>> groups;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      auto& g = groups[quantize(probs[i])];
      g.first += labels[i];
      g.second += 1;
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const auto& g = groups[quantize(probs[i])];
      c[i] = g.first / static_cast<double>(g.second);
    }
  } else {
    const std::size_t m = grouping.bins;
    if (m == 0) throw InvalidSpec("binned grouping needs bins > 0");
    std::vector<double> sum(m, 0.0);
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const std::size_t b = bin_index(probs[i], m);
      sum[b] += labels[i];
      counts[b] += 1;
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const std::size_t b = bin_index(probs[i], m);
      c[i] = sum[b] / static_cast<double>(counts[b]);
    }
  }
  return c;
}

BrierDecomposition brier_decomposition(const std::vector<double>& probs,
                                       const std::vector<int>& labels, const Grouping& grouping) {
  const std::vector<double> c = group_calibrated_values(probs, labels, grouping);
  const double n = static_cast<double>(probs.size());
  BrierDecomposition out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double y = static_cast<double>(labels[i]);
    out.classification_error += (probs[i] - y) * (probs[i] - y);
    out.calibration_error += (probs[i] - c[i]) * (probs[i] - c[i]);
    out.sharpness += c[i] * c[i];
    out.base_rate += y;
  }
  out.classification_error /= n;
  out.calibration_error /= n;
  out.sharpness /= n;
  out.base_rate /= n;
  return out;
}

double binary_confidence(double prob) { return std::max(prob, 1.0 - prob); }

int binary_prediction(double prob) { return prob >= 0.5 ? 1 : 0; }

void confidence_correctness(const std::vector<double>& probs, const std::vector<int>& labels,
                            std::vector<double>& confidences, std::vector<int>& correctness) {
  if (probs.size() != labels.size()) throw ShapeMismatch("probs/labels lengths");
  confidences.resize(probs.size());
  correctness.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    confidences[i] = binary_confidence(probs[i]);
    correctness[i] = binary_prediction(probs[i]) == labels[i] ? 1 : 0;
  }
}

std::vector<double> default_temperature_grid() {
  std::vector<double> grid(33);
  const double lo = std::log(0.25);
  const double hi = std::log(4.0);
  for (std::size_t k = 0; k < grid.size(); ++k)
    grid[k] = std::exp(lo + (hi - lo) * static_cast<double>(k) / 32.0);
  grid[16] = 1.0;  // exact midpoint
  return grid;
}

TemperatureFit fit_temperature(const std::vector<double>& logits, const std::vector<int>& labels,
                               const std::vector<double>& grid, std::size_t n_bins) {
  if (grid.empty()) throw EmptyInput("temperature grid");
  for (double tau : grid) {
    if (!(tau > 0.0)) throw InvalidSpec("temperature grid must be strictly positive");
  }
  if (logits.size() != labels.size()) throw ShapeMismatch("logits/labels lengths");
  if (logits.empty()) throw EmptyInput("fit_temperature over empty sample");

  auto ece_at = [&](double tau) {
    std::vector<double> probs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
      probs[i] = 1.0 / (1.0 + std::exp(-logits[i] / tau));
    std::vector<double> conf;
    std::vector<int> correct;
    confidence_correctness(probs, labels, conf, correct);
    return ece(conf, correct, n_bins);
  };

  TemperatureFit fit;
  fit.raw_ece = ece_at(1.0);
  double best = std::numeric_limits<double>::infinity();
  double best_tau = 1.0;
  for (double tau : grid) {
    const double e = ece_at(tau);
    const bool better = e < best - 1e-15;
    const bool tie_closer_to_one =
        std::fabs(e - best) <= 1e-15 && std::fabs(std::log(tau)) < std::fabs(std::log(best_tau));
    if (better || tie_closer_to_one) {
      best = e;
      best_tau = tau;
    }
  }
  fit.tau = best_tau;
  fit.scaled_ece = best;
  return fit;
}

void save_reliability_csv(const std::filesystem::path& path, const std::vector<BinStat>& bins) {
  std::vector<std::string> rows;
  rows.reserve(bins.size());
  for (const BinStat& b : bins) {
    rows.push_back(csv::join_row({csv::format_double(b.lo), csv::format_double(b.hi),
                                  std::to_string(b.count), csv::format_double(b.mean_confidence),
                                  csv::format_double(b.accuracy)}));
  }
  csv::write_file(path, "bin_lo,bin_hi,count,conf,acc", rows);
}

}  // namespace calbound::calibration
