#include "crowdcal/aggregation.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <tuple>

#include "crowdcal/csv.hpp"
#include "crowdcal/error.hpp"
#include "crowdcal/metrics.hpp"
#include "crowdcal/parallel.hpp"

namespace crowdcal {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::BC:
      return "BC";
    case Variant::EB:
      return "EB";
    case Variant::rEB_noCR:
      return "rEB_noCR";
    case Variant::rEB_CR:
      return "rEB_CR";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  throw ContractError("unknown variant '" + std::string(text) + "'");
}

void ResamplingPlan::validate() const {
  if (k < 1) throw ContractError("resampling k must be >= 1");
  if (n_replicates < 1) throw ContractError("n_replicates must be >= 1");
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng,
                                        Sampling sampling) {
  std::vector<std::size_t> out;
  out.reserve(k);
  if (sampling == Sampling::WithReplacement) {
    if (n == 0) throw InsufficientJudgments({});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pick(rng));
    return out;
  }
  if (k > n) throw InsufficientJudgments({});
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(idx[i]);
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> draw(std::span<const T> pool, std::size_t k, Rng& rng, Sampling sampling,
                    std::string_view item) {
  if (k < 1) throw ContractError("k must be >= 1");
  const bool short_pool =
      sampling == Sampling::WithoutReplacement ? pool.size() < k : pool.empty();
  if (short_pool) throw InsufficientJudgments({item.empty() ? "<unnamed>" : std::string(item)});
  std::vector<T> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<T> picked;
  picked.reserve(k);
  for (std::size_t i : sample_indices(sorted.size(), k, rng, sampling)) picked.push_back(sorted[i]);
  return picked;
}

}  // namespace

int woc_majority(std::span<const int> votes, std::size_t k, Rng& rng, Sampling sampling,
                 std::string_view item) {
  const auto picked = draw(votes, k, rng, sampling, item);
  const auto positives = static_cast<std::size_t>(std::count(picked.begin(), picked.end(), 1));
  return 2 * positives >= k ? 1 : 0;
}

double woc_proportion(std::span<const int> votes, std::size_t k, Rng& rng, Sampling sampling,
                      std::string_view item) {
  const auto picked = draw(votes, k, rng, sampling, item);
  const auto positives = std::count(picked.begin(), picked.end(), 1);
  return static_cast<double>(positives) / static_cast<double>(k);
}

double woc_mean_belief(std::span<const double> beliefs, std::size_t k, Rng& rng, Sampling sampling,
                       std::string_view item) {
  const auto picked = draw(beliefs, k, rng, sampling, item);
  return std::accumulate(picked.begin(), picked.end(), 0.0) / static_cast<double>(k);
}

namespace {

// Judgment values per corpus item (GS and QA), in corpus order.
struct ItemPools {
  std::vector<const Item*> items;
  std::vector<std::vector<double>> beliefs;
  std::vector<std::vector<int>> votes;
};

ItemPools collect_pools(const JudgmentTable& table, const Corpus& corpus) {
  ItemPools pools;
  for (const Item& item : corpus.items()) {
    pools.items.push_back(&item);
    std::vector<double> b;
    std::vector<int> v;
    for (const Judgment* j : table.for_item(item.id)) {
      b.push_back(j->value);
      v.push_back(classify(j->value, 0.5));
    }
    pools.beliefs.push_back(std::move(b));
    pools.votes.push_back(std::move(v));
  }
  return pools;
}

void check_sufficient(const ItemPools& pools, const ResamplingPlan& plan) {
  std::vector<std::string> deficient;
  for (std::size_t i = 0; i < pools.items.size(); ++i) {
    const std::size_t have = pools.beliefs[i].size();
    const bool short_pool =
        plan.sampling == Sampling::WithoutReplacement ? have < plan.k : have == 0;
    if (short_pool) {
      deficient.push_back(pools.items[i]->id + " (" + std::to_string(have) + " < " +
                          std::to_string(plan.k) + ")");
    }
  }
  if (!deficient.empty()) throw InsufficientJudgments(std::move(deficient));
}

WocDataset replicate_from_pools(const ItemPools& pools, const Corpus& corpus,
                                const ResamplingPlan& plan, Variant variant, std::size_t r) {
  WocDataset ds;
  ds.replicate_index = r;
  ds.variant = variant;
  ds.plan = plan;
  ds.gs_prevalence = corpus.gs_prevalence();
  Rng rng(derive_seed(plan.seed, static_cast<std::uint64_t>(r)));
  for (std::size_t i = 0; i < pools.items.size(); ++i) {
    const std::string& id = pools.items[i]->id;
    const double label = variant == Variant::BC
                             ? woc_proportion(pools.votes[i], plan.k, rng, plan.sampling, id)
                             : woc_mean_belief(pools.beliefs[i], plan.k, rng, plan.sampling, id);
    ds.labels.emplace_hint(ds.labels.end(), id, label);
  }
  return ds;
}

void check_variant(Variant variant) {
  if (variant == Variant::rEB_CR) {
    throw ContractError("rEB_CR datasets come from recalibrate_crowd, not resampling");
  }
}

}  // namespace

std::vector<WocDataset> generate_replicates(const JudgmentTable& table, const Corpus& corpus,
                                            const ResamplingPlan& plan, Variant variant,
                                            std::size_t jobs) {
  plan.validate();
  check_variant(variant);
  const ItemPools pools = collect_pools(table, corpus);
  check_sufficient(pools, plan);
  std::vector<WocDataset> out(plan.n_replicates);
  parallel_for(plan.n_replicates, jobs, [&](std::size_t r) {
    out[r] = replicate_from_pools(pools, corpus, plan, variant, r);
  });
  return out;
}

WocDataset generate_replicate(const JudgmentTable& table, const Corpus& corpus,
                              const ResamplingPlan& plan, Variant variant,
                              std::size_t replicate_index) {
  plan.validate();
  check_variant(variant);
  const ItemPools pools = collect_pools(table, corpus);
  check_sufficient(pools, plan);
  return replicate_from_pools(pools, corpus, plan, variant, replicate_index);
}

std::vector<SweepPoint> crowd_size_sweep(const JudgmentTable& table, const Corpus& corpus,
                                         std::span<const std::size_t> sizes,
                                         const ResamplingPlan& plan_template, Variant variant,
                                         const MetricsCallback& callback, std::size_t jobs) {
  check_variant(variant);
  const ItemPools pools = collect_pools(table, corpus);
  std::vector<SweepPoint> out;
  for (std::size_t k : sizes) {
    ResamplingPlan plan = plan_template;
    plan.k = k;
    plan.validate();
    check_sufficient(pools, plan);
    std::vector<std::map<std::string, double>> per_rep(plan.n_replicates);
    parallel_for(plan.n_replicates, jobs, [&](std::size_t r) {
      per_rep[r] = callback(replicate_from_pools(pools, corpus, plan, variant, r));
    });
    SweepPoint point;
    point.k = k;
    for (const auto& m : per_rep) {
      for (const auto& [name, value] : m) point.values[name].push_back(value);
    }
    for (const auto& [name, values] : point.values) {
      MetricSummary s;
      s.n = values.size();
      if (values.size() >= 2) {
        const ConfidenceInterval ci = replicate_ci(values, 0.95);
        s.mean = ci.mean;
        s.lower = ci.lower;
        s.upper = ci.upper;
        s.sd = ci.sd;
      } else {
        s.mean = s.lower = s.upper = values.front();
      }
      point.metrics[name] = s;
    }
    out.push_back(std::move(point));
  }
  return out;
}

void write_woc_csv(std::ostream& out, std::span<const WocDataset> datasets) {
  csv::write_row(out, {"replicate", "variant", "item_id", "label"});
  for (const WocDataset& ds : datasets) {
    for (const auto& [id, label] : ds.labels) {
      csv::write_row(out, {std::to_string(ds.replicate_index), std::string(to_string(ds.variant)),
                           id, csv::format_double(label)});
    }
  }
}

std::vector<WocDataset> read_woc_csv(std::istream& in) {
  csv::Reader reader(in);
  if (!reader.read_header()) return {};
  const std::size_t c_rep = reader.column("replicate"), c_var = reader.column("variant"),
                    c_item = reader.column("item_id"), c_label = reader.column("label");
  std::map<std::pair<std::size_t, Variant>, WocDataset> grouped;
  while (auto row = reader.next()) {
    const auto& f = *row;
    if (f.size() != reader.header().size()) {
      throw ContractError("WoC CSV line " + std::to_string(reader.line()) + ": wrong field count");
    }
    const auto rep = static_cast<std::size_t>(csv::parse_int(f[c_rep]));
    const Variant variant = parse_variant(f[c_var]);
    const double label = csv::parse_double(f[c_label]);
    if (!(label >= 0.0 && label <= 1.0)) {
      throw ContractError("WoC CSV line " + std::to_string(reader.line()) + ": label outside [0,1]");
    }
    WocDataset& ds = grouped[{rep, variant}];
    ds.replicate_index = rep;
    ds.variant = variant;
    if (!ds.labels.emplace(f[c_item], label).second) {
      throw ContractError("WoC CSV line " + std::to_string(reader.line()) + ": duplicate item");
    }
  }
  std::vector<WocDataset> out;
  for (auto& [key, ds] : grouped) out.push_back(std::move(ds));
  return out;
}

std::map<ItemId, double> labels_for(const WocDataset& dataset, const Corpus& corpus, ItemSet set) {
  std::map<ItemId, double> out;
  for (const Item* item : corpus.subset(set)) {
    auto it = dataset.labels.find(item->id);
    if (it == dataset.labels.end()) throw ContractError("dataset has no label for " + item->id);
    out.emplace(item->id, it->second);
  }
  return out;
}

std::map<ItemId, int> truth_for(const Corpus& corpus, ItemSet set) {
  std::map<ItemId, int> out;
  for (const Item* item : corpus.subset(set)) out.emplace(item->id, item->true_label);
  return out;
}

}  // namespace crowdcal
