#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crowdcal/core.hpp"
#include "crowdcal/random.hpp"

namespace crowdcal {

enum class Variant : std::uint8_t { BC, EB, rEB_noCR, rEB_CR };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);
inline constexpr Variant kAllVariants[] = {Variant::BC, Variant::EB, Variant::rEB_noCR,
                                           Variant::rEB_CR};

enum class Sampling : std::uint8_t { WithoutReplacement, WithReplacement };

struct ResamplingPlan {
  std::size_t k = 9;  // judgments drawn per item
  std::size_t n_replicates = 100;
  Sampling sampling = Sampling::WithoutReplacement;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ResamplingPlan&, const ResamplingPlan&) = default;
};

struct WocDataset {
  std::size_t replicate_index = 0;
  Variant variant = Variant::BC;
  std::map<ItemId, double> labels;  // GS and QA items
  ResamplingPlan plan;
  double gs_prevalence = 0.0;

  friend bool operator==(const WocDataset&, const WocDataset&) = default;
};

// Label >= threshold is positive; an exact tie goes to the positive class.
template <typename Scalar>
int classify(Scalar label, Scalar threshold = Scalar(0.5)) {
  return label >= threshold ? 1 : 0;
}

// The three aggregators draw k values from the pool and summarise them.
// The pool is put in canonical (sorted) order before sampling, so a label
// depends only on the multiset of judgments and the generator state.
// Throws InsufficientJudgments (naming `item`) when sampling without
// replacement from fewer than k values.
int woc_majority(std::span<const int> votes, std::size_t k, Rng& rng,
                 Sampling sampling = Sampling::WithoutReplacement, std::string_view item = {});
double woc_proportion(std::span<const int> votes, std::size_t k, Rng& rng,
                      Sampling sampling = Sampling::WithoutReplacement,
                      std::string_view item = {});
double woc_mean_belief(std::span<const double> beliefs, std::size_t k, Rng& rng,
                       Sampling sampling = Sampling::WithoutReplacement,
                       std::string_view item = {});

// k indices into [0, n): a partial Fisher-Yates shuffle without
// replacement, independent uniform draws with replacement.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng, Sampling sampling);

// n_replicates crowd datasets over every GS and QA item of the corpus.
// BC takes the proportion of positive votes, EB and rEB_noCR the mean
// belief. Replicate r draws from derive_seed(plan.seed, r), so each replicate
// is reproducible on its own. Every deficient item is listed before aborting.
std::vector<WocDataset> generate_replicates(const JudgmentTable& table, const Corpus& corpus,
                                            const ResamplingPlan& plan, Variant variant,
                                            std::size_t jobs = 1);

WocDataset generate_replicate(const JudgmentTable& table, const Corpus& corpus,
                              const ResamplingPlan& plan, Variant variant,
                              std::size_t replicate_index);

// Named summary statistics for one replicate; absent metrics are left out.
using MetricsCallback = std::function<std::map<std::string, double>(const WocDataset&)>;

struct MetricSummary {
  double mean = 0.0;
  double lower = 0.0;  // 95% interval across replicates
  double upper = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct SweepPoint {
  std::size_t k = 0;
  std::map<std::string, MetricSummary> metrics;
  std::map<std::string, std::vector<double>> values;  // per replicate
};

// Regenerates replicates at every crowd size and summarises the callback.
std::vector<SweepPoint> crowd_size_sweep(const JudgmentTable& table, const Corpus& corpus,
                                         std::span<const std::size_t> sizes,
                                         const ResamplingPlan& plan_template, Variant variant,
                                         const MetricsCallback& callback, std::size_t jobs = 1);

void write_woc_csv(std::ostream& out, std::span<const WocDataset> datasets);
// Reads rows back into datasets grouped by (replicate, variant).
std::vector<WocDataset> read_woc_csv(std::istream& in);

// Labels restricted to one set of the corpus, in corpus order.
std::map<ItemId, double> labels_for(const WocDataset& dataset, const Corpus& corpus, ItemSet set);
std::map<ItemId, int> truth_for(const Corpus& corpus, ItemSet set);

}  // namespace crowdcal
