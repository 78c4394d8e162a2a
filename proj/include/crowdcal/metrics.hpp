#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crowdcal/core.hpp"

namespace crowdcal {

struct ConfusionCounts {
  std::size_t true_positive = 0;
  std::size_t false_negative = 0;  // misses
  std::size_t false_positive = 0;  // false alarms
  std::size_t true_negative = 0;

  std::size_t total() const {
    return true_positive + false_negative + false_positive + true_negative;
  }
};

// Rates are absent when their denominator class is missing from the truth.
struct ErrorRates {
  std::optional<double> miss_rate;
  std::optional<double> false_alarm_rate;
  ConfusionCounts counts;
};

ErrorRates error_rates(const Eigen::Ref<const Eigen::ArrayXi>& labels,
                       const Eigen::Ref<const Eigen::ArrayXi>& truth);
// Keys must match exactly; otherwise KeyMismatchError with the difference.
ErrorRates error_rates(const std::map<ItemId, int>& labels, const std::map<ItemId, int>& truth);

// Equal-width bins over [0,1]; bin i holds [i/n, (i+1)/n) and the last bin is
// closed at 1.
std::size_t bin_index(double label, std::size_t n_bins);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double label_sum = 0.0;
  std::size_t positives = 0;
  std::optional<double> mean_label;         // x coordinate
  std::optional<double> positive_fraction;  // y coordinate
};

struct CalibrationCurve {
  std::size_t n_bins = 0;
  std::size_t total = 0;
  std::vector<CalibrationBin> bins;
};

CalibrationCurve calibration_curve(const Eigen::Ref<const Eigen::ArrayXd>& labels,
                                   const Eigen::Ref<const Eigen::ArrayXi>& truth,
                                   std::size_t n_bins);
CalibrationCurve calibration_curve(const std::map<ItemId, double>& labels,
                                   const std::map<ItemId, int>& truth, std::size_t n_bins);

struct EceConfig {
  std::size_t n_bins = 10;
};

// Sum over occupied bins of (count/total) * |mean_label - positive_fraction|.
double ece_from_curve(const CalibrationCurve& curve);
double ece(const Eigen::Ref<const Eigen::ArrayXd>& labels,
           const Eigen::Ref<const Eigen::ArrayXi>& truth, const EceConfig& cfg = {});
double ece(const std::map<ItemId, double>& labels, const std::map<ItemId, int>& truth,
           const EceConfig& cfg = {});

enum class CiMethod : std::uint8_t { TInterval, PercentileBootstrap };

struct ConfidenceInterval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct CiOptions {
  CiMethod method = CiMethod::TInterval;
  std::size_t bootstrap_resamples = 2000;
  std::uint64_t bootstrap_seed = 0;
};

// Interval for the mean of replicate values; needs at least two values.
ConfidenceInterval replicate_ci(std::span<const double> values, double level = 0.95,
                                const CiOptions& options = {});

// Probability that a majority of n independent voters, each correct with
// probability p, is correct. n must be odd.
double majority_accuracy_exact(double p, std::size_t n);

struct MetricRow {
  std::string variant;
  double gs_prevalence = 0.0;
  std::string replicate;  // index, or "mean"/"lower"/"upper" on summary rows
  std::optional<double> miss;
  std::optional<double> fa;
  std::optional<double> ece;
  std::optional<std::string> split;  // model metrics only
};

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows, bool with_split = false);

struct CurveRow {
  std::string variant;
  CalibrationCurve curve;
};

void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows);

// Parses the curve CSV back; used to verify that ECE is recoverable from the
// emitted fields.
std::vector<CurveRow> read_curve_csv(std::istream& in);

}  // namespace crowdcal
