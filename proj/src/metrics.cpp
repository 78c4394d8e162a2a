#include "crowdcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "crowdcal/csv.hpp"
#include "crowdcal/error.hpp"
#include "crowdcal/random.hpp"

namespace crowdcal {

namespace {

template <typename V>
std::vector<std::string> key_difference(const std::map<ItemId, V>& labels,
                                        const std::map<ItemId, int>& truth) {
  std::vector<std::string> diff;
  auto a = labels.begin();
  auto b = truth.begin();
  while (a != labels.end() || b != truth.end()) {
    if (b == truth.end() || (a != labels.end() && a->first < b->first)) {
      diff.push_back(a++->first);
    } else if (a == labels.end() || b->first < a->first) {
      diff.push_back(b++->first);
    } else {
      ++a;
      ++b;
    }
  }
  return diff;
}

template <typename V, typename Array>
std::pair<Array, Eigen::ArrayXi> aligned(const std::map<ItemId, V>& labels,
                                         const std::map<ItemId, int>& truth) {
  if (labels.size() != truth.size() || !std::equal(labels.begin(), labels.end(), truth.begin(),
                                                   [](const auto& x, const auto& y) {
                                                     return x.first == y.first;
                                                   })) {
    throw KeyMismatchError(key_difference(labels, truth));
  }
  Array l(static_cast<Eigen::Index>(labels.size()));
  Eigen::ArrayXi t(static_cast<Eigen::Index>(truth.size()));
  Eigen::Index i = 0;
  auto b = truth.begin();
  for (auto a = labels.begin(); a != labels.end(); ++a, ++b, ++i) {
    l[i] = a->second;
    t[i] = b->second;
  }
  return {std::move(l), std::move(t)};
}

}  // namespace

ErrorRates error_rates(const Eigen::Ref<const Eigen::ArrayXi>& labels,
                       const Eigen::Ref<const Eigen::ArrayXi>& truth) {
  if (labels.size() != truth.size()) throw ContractError("labels and truth differ in length");
  ErrorRates r;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const bool said = labels[i] != 0;
    if (truth[i] != 0) {
      said ? ++r.counts.true_positive : ++r.counts.false_negative;
    } else {
      said ? ++r.counts.false_positive : ++r.counts.true_negative;
    }
  }
  const auto& c = r.counts;
  if (const auto pos = c.true_positive + c.false_negative; pos > 0) {
    r.miss_rate = static_cast<double>(c.false_negative) / static_cast<double>(pos);
  }
  if (const auto neg = c.false_positive + c.true_negative; neg > 0) {
    r.false_alarm_rate = static_cast<double>(c.false_positive) / static_cast<double>(neg);
  }
  return r;
}

ErrorRates error_rates(const std::map<ItemId, int>& labels, const std::map<ItemId, int>& truth) {
  auto [l, t] = aligned<int, Eigen::ArrayXi>(labels, truth);
  return error_rates(l, t);
}

std::size_t bin_index(double label, std::size_t n_bins) {
  if (n_bins == 0) throw ContractError("n_bins must be >= 1");
  if (!(label >= 0.0 && label <= 1.0)) throw ContractError("label outside [0,1]");
  const double n = static_cast<double>(n_bins);
  auto b = static_cast<std::size_t>(std::floor(label * n));
  // Agree with the edges i/n as computed in double.
  if (b > 0 && label < static_cast<double>(b) / n) --b;
  if (b + 1 < n_bins && label >= static_cast<double>(b + 1) / n) ++b;
  return std::min(b, n_bins - 1);
}

CalibrationCurve calibration_curve(const Eigen::Ref<const Eigen::ArrayXd>& labels,
                                   const Eigen::Ref<const Eigen::ArrayXi>& truth,
                                   std::size_t n_bins) {
  if (labels.size() != truth.size()) throw ContractError("labels and truth differ in length");
  if (n_bins == 0) throw ContractError("n_bins must be >= 1");
  CalibrationCurve curve;
  curve.n_bins = n_bins;
  curve.total = static_cast<std::size_t>(labels.size());
  curve.bins.resize(n_bins);
  const double n = static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    curve.bins[b].lower = static_cast<double>(b) / n;
    curve.bins[b].upper = static_cast<double>(b + 1) / n;
  }
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    CalibrationBin& bin = curve.bins[bin_index(labels[i], n_bins)];
    ++bin.count;
    bin.label_sum += labels[i];
    bin.positives += truth[i] != 0 ? 1u : 0u;
  }
  for (CalibrationBin& bin : curve.bins) {
    if (bin.count == 0) continue;
    const auto c = static_cast<double>(bin.count);
    bin.mean_label = bin.label_sum / c;
    bin.positive_fraction = static_cast<double>(bin.positives) / c;
  }
  return curve;
}

CalibrationCurve calibration_curve(const std::map<ItemId, double>& labels,
                                   const std::map<ItemId, int>& truth, std::size_t n_bins) {
  auto [l, t] = aligned<double, Eigen::ArrayXd>(labels, truth);
  return calibration_curve(l, t, n_bins);
}

double ece_from_curve(const CalibrationCurve& curve) {
  std::size_t total = 0;
  for (const auto& bin : curve.bins) total += bin.count;
  if (total == 0) throw ContractError("ECE of an empty dataset");
  double sum = 0.0;
  for (const auto& bin : curve.bins) {
    if (bin.count == 0) continue;
    sum += static_cast<double>(bin.count) / static_cast<double>(total) *
           std::abs(*bin.mean_label - *bin.positive_fraction);
  }
  return sum;
}

double ece(const Eigen::Ref<const Eigen::ArrayXd>& labels,
           const Eigen::Ref<const Eigen::ArrayXi>& truth, const EceConfig& cfg) {
  if (labels.size() == 0) throw ContractError("ECE of an empty dataset");
  return ece_from_curve(calibration_curve(labels, truth, cfg.n_bins));
}

double ece(const std::map<ItemId, double>& labels, const std::map<ItemId, int>& truth,
           const EceConfig& cfg) {
  auto [l, t] = aligned<double, Eigen::ArrayXd>(labels, truth);
  return ece(l, t, cfg);
}

ConfidenceInterval replicate_ci(std::span<const double> values, double level,
                                const CiOptions& options) {
  if (values.size() < 2) throw ContractError("a confidence interval needs at least two values");
  if (!(level > 0.0 && level < 1.0)) throw ContractError("CI level must be in (0,1)");
  const auto n = static_cast<double>(values.size());
  ConfidenceInterval ci;
  ci.n = values.size();
  ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
  ci.sd = std::sqrt(ss / (n - 1.0));

  if (options.method == CiMethod::TInterval) {
    const boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(dist, 0.5 + level / 2.0);
    const double half = t * ci.sd / std::sqrt(n);
    ci.lower = ci.mean - half;
    ci.upper = ci.mean + half;
    return ci;
  }

  Rng rng(options.bootstrap_seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(std::max<std::size_t>(options.bootstrap_resamples, 1));
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / n;
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  ci.lower = at((1.0 - level) / 2.0);
  ci.upper = at(0.5 + level / 2.0);
  return ci;
}

double majority_accuracy_exact(double p, std::size_t n) {
  if (n == 0 || n % 2 == 0) throw ContractError("majority accuracy needs an odd crowd size");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("p must be in [0,1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  // Upper binomial tail in log space, shifted by the largest term.
  const double nn = static_cast<double>(n);
  const double lp = std::log(p), lq = std::log1p(-p);
  std::vector<double> logs;
  for (std::size_t j = (n + 1) / 2; j <= n; ++j) {
    const double jj = static_cast<double>(j);
    logs.push_back(std::lgamma(nn + 1) - std::lgamma(jj + 1) - std::lgamma(nn - jj + 1) +
                   jj * lp + (nn - jj) * lq);
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double l : logs) sum += std::exp(l - top);
  return std::min(1.0, std::exp(top) * sum);
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

}  // namespace

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows, bool with_split) {
  std::vector<std::string> header{"variant", "gs_prevalence", "replicate"};
  if (with_split) header.push_back("split");
  header.insert(header.end(), {"miss", "fa", "ece"});
  csv::write_row(out, header);
  for (const MetricRow& r : rows) {
    std::vector<std::string> f{r.variant, csv::format_double(r.gs_prevalence), r.replicate};
    if (with_split) f.push_back(r.split.value_or(""));
    f.insert(f.end(), {opt(r.miss), opt(r.fa), opt(r.ece)});
    csv::write_row(out, f);
  }
}

void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows) {
  csv::write_row(out, {"variant", "bin", "mean_label", "positive_fraction", "count"});
  for (const CurveRow& row : rows) {
    for (std::size_t b = 0; b < row.curve.bins.size(); ++b) {
      const auto& bin = row.curve.bins[b];
      csv::write_row(out, {row.variant, std::to_string(b), opt(bin.mean_label),
                           opt(bin.positive_fraction), std::to_string(bin.count)});
    }
  }
}

std::vector<CurveRow> read_curve_csv(std::istream& in) {
  csv::Reader reader(in);
  std::vector<CurveRow> rows;
  if (!reader.read_header()) return rows;
  const std::size_t c_var = reader.column("variant"), c_bin = reader.column("bin"),
                    c_mean = reader.column("mean_label"),
                    c_frac = reader.column("positive_fraction"), c_count = reader.column("count");
  while (auto row = reader.next()) {
    const auto& f = *row;
    if (rows.empty() || rows.back().variant != f[c_var]) rows.push_back({f[c_var], {}});
    CalibrationCurve& curve = rows.back().curve;
    const auto b = static_cast<std::size_t>(csv::parse_int(f[c_bin]));
    if (b != curve.bins.size()) throw ContractError("curve CSV bins out of order");
    CalibrationBin bin;
    bin.count = static_cast<std::size_t>(csv::parse_int(f[c_count]));
    if (!f[c_mean].empty()) bin.mean_label = csv::parse_double(f[c_mean]);
    if (!f[c_frac].empty()) bin.positive_fraction = csv::parse_double(f[c_frac]);
    curve.bins.push_back(bin);
    curve.total += bin.count;
    curve.n_bins = curve.bins.size();
  }
  for (auto& row : rows) {
    const double n = static_cast<double>(row.curve.n_bins);
    for (std::size_t b = 0; b < row.curve.bins.size(); ++b) {
      row.curve.bins[b].lower = static_cast<double>(b) / n;
      row.curve.bins[b].upper = static_cast<double>(b + 1) / n;
    }
  }
  return rows;
}

}  // namespace crowdcal
