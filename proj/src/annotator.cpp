#include "crowdcal/annotator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "crowdcal/error.hpp"
#include "crowdcal/parallel.hpp"

namespace crowdcal {

void AnnotatorProfile::validate() const {
  if (!(d_prime >= 0.0)) throw ContractError("d_prime must be >= 0");
  if (!(lapse_rate >= 0.0 && lapse_rate <= 1.0)) throw ContractError("lapse_rate must be in [0,1]");
  if (!(adaptation_rate >= 0.0 && adaptation_rate <= 1.0)) {
    throw ContractError("adaptation_rate must be in [0,1]");
  }
  if (!(belief_slope > 0.0)) throw ContractError("belief_slope must be > 0");
  if (!std::isfinite(criterion_init)) throw ContractError("criterion_init must be finite");
}

void ContestConfig::validate() const {
  if (n_trials < 1) throw ContractError("n_trials must be >= 1");
  if (!(gs_fraction > 0.0 && gs_fraction < 1.0)) throw ContractError("gs_fraction must be in (0,1)");
  if (corpus == nullptr) throw ContractError("contest has no corpus");
}

void PopulationSpec::validate() const {
  if (n_annotators < 1) throw ContractError("n_annotators must be >= 1");
  if (!(d_prime_min >= 0.0 && d_prime_max >= d_prime_min)) {
    throw ContractError("need 0 <= d_prime_min <= d_prime_max");
  }
  AnnotatorProfile{d_prime_min, criterion_init, adaptation_rate, belief_slope, lapse_rate}
      .validate();
}

std::vector<ItemId> sample_trial_stream(const ContestConfig& config, Rng& rng) {
  config.validate();
  const Corpus& corpus = *config.corpus;

  // Eligible item indices per set; a drawn source removes all its copies.
  std::vector<std::size_t> eligible[2];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    eligible[corpus.items()[i].set == ItemSet::GS ? 0 : 1].push_back(i);
  }

  std::bernoulli_distribution pick_gs(config.gs_fraction);
  std::vector<ItemId> stream;
  stream.reserve(config.n_trials);
  for (std::size_t t = 0; t < config.n_trials; ++t) {
    std::size_t which = pick_gs(rng) ? 0 : 1;
    if (eligible[which].empty()) which = 1 - which;
    if (eligible[which].empty()) {
      throw StreamError(t, "corpus exhausted at trial " + std::to_string(t) +
                               ": every source has already been shown");
    }
    auto& pool = eligible[which];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const Item& item = corpus.items()[pool[pick(rng)]];
    stream.push_back(item.id);
    std::erase_if(pool, [&](std::size_t i) { return corpus.items()[i].source_id == item.source_id; });
  }
  return stream;
}

std::vector<ItemId> sample_trial_stream(const ContestConfig& config) {
  Rng rng(config.seed);
  return sample_trial_stream(config, rng);
}

std::vector<Judgment> simulate_annotator(const AnnotatorProfile& profile,
                                         std::span<const ItemId> stream, const Corpus& corpus,
                                         ResponseMode mode, Rng& rng,
                                         const AnnotatorId& annotator_id, SimulationTrace* trace) {
  profile.validate();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Condition condition{corpus.gs_prevalence(), mode};
  double criterion = profile.criterion_init;
  std::vector<Judgment> out;
  out.reserve(stream.size());
  if (trace) {
    trace->evidence.clear();
    trace->criterion.clear();
  }

  for (std::size_t t = 0; t < stream.size(); ++t) {
    const Item& item = corpus.at(stream[t]);
    const double z = noise(rng);
    const double lapse_draw = unit(rng);
    const double lapse_response = unit(rng);

    const double x = (item.true_label ? 0.5 : -0.5) * profile.d_prime + z;
    double value;
    if (lapse_draw < profile.lapse_rate) {
      value = mode == ResponseMode::Binary ? (lapse_response < 0.5 ? 1.0 : 0.0) : lapse_response;
    } else if (mode == ResponseMode::Binary) {
      value = x > criterion ? 1.0 : 0.0;
    } else {
      value = 1.0 / (1.0 + std::exp(-profile.belief_slope * (x - criterion)));
    }
    if (trace) {
      trace->evidence.push_back(x);
      trace->criterion.push_back(criterion);
    }

    Judgment j;
    j.annotator_id = annotator_id;
    j.item_id = item.id;
    j.mode = mode;
    j.value = value;
    j.trial_index = t;
    j.feedback_shown = item.set == ItemSet::GS;
    j.condition = condition;
    j.set = item.set;
    j.true_label = item.true_label;
    out.push_back(std::move(j));

    if (item.set == ItemSet::GS) {
      const bool said_positive = value >= 0.5;
      if (said_positive && item.true_label == 0) {
        criterion += profile.adaptation_rate;
      } else if (!said_positive && item.true_label == 1) {
        criterion -= profile.adaptation_rate;
      }
    }
  }
  if (trace) trace->final_criterion = criterion;
  return out;
}

Leaderboard leaderboard(const JudgmentTable& table, ResponseMode mode) {
  Leaderboard board;
  for (const auto& [annotator, indices] : table.by_annotator()) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i : indices) {
      const Judgment& j = table.judgments()[i];
      if (j.set != ItemSet::GS) continue;
      if (mode == ResponseMode::Binary) {
        total += (j.value >= 0.5) == (j.true_label == 1) ? 1.0 : 0.0;
      } else {
        total += score_quadratic(j.value, j.true_label);
      }
      ++n;
    }
    if (n == 0) {
      board.warnings.push_back("annotator " + annotator + " has no GS judgments; not ranked");
      continue;
    }
    board.ranking.push_back({annotator, total / static_cast<double>(n), n});
  }
  std::sort(board.ranking.begin(), board.ranking.end(),
            [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
              if (a.performance != b.performance) return a.performance > b.performance;
              return a.annotator_id < b.annotator_id;
            });
  return board;
}

JudgmentTable simulate_population(const PopulationSpec& population, const ContestConfig& contest,
                                  ResponseMode mode, std::uint64_t master_seed,
                                  const std::string& id_prefix, std::size_t jobs) {
  population.validate();
  contest.validate();
  std::vector<std::vector<Judgment>> per_annotator(population.n_annotators);
  parallel_for(population.n_annotators, jobs, [&](std::size_t a) {
    const AnnotatorId id = id_prefix + std::to_string(a);
    Rng rng(derive_seed(master_seed, id));
    std::uniform_real_distribution<double> d_prime(population.d_prime_min, population.d_prime_max);
    AnnotatorProfile profile;
    profile.d_prime = population.d_prime_max > population.d_prime_min ? d_prime(rng)
                                                                       : population.d_prime_min;
    profile.criterion_init = population.criterion_init;
    profile.adaptation_rate = population.adaptation_rate;
    profile.belief_slope = population.belief_slope;
    profile.lapse_rate = population.lapse_rate;
    const auto stream = sample_trial_stream(contest, rng);
    per_annotator[a] = simulate_annotator(profile, stream, *contest.corpus, mode, rng, id);
  });
  std::vector<Judgment> all;
  for (auto& v : per_annotator) {
    all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  return JudgmentTable(std::move(all));
}

}  // namespace crowdcal
