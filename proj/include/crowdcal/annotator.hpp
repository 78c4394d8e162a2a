#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crowdcal/core.hpp"
#include "crowdcal/random.hpp"

namespace crowdcal {

// Equal-variance Gaussian signal-detection worker.
//
// Evidence on a trial is N(+d'/2, 1) for positives and N(-d'/2, 1) for
// negatives. A binary response is [x > c]; a belief response is
// logistic(belief_slope * (x - c)), so both modes share one latent process.
// After every gold-standard trial the criterion c takes one fixed step:
// up after a false alarm, down after a miss. The criterion therefore settles
// where misses and false alarms in the feedback stream balance, which pulls
// it toward the base rate the worker experiences.
struct AnnotatorProfile {
  double d_prime = 1.5;
  double criterion_init = 0.0;
  double adaptation_rate = 0.0;
  double belief_slope = 1.0;
  double lapse_rate = 0.0;

  void validate() const;
};

enum class Scoring : std::uint8_t { Accuracy, QuadraticBelief };

struct ContestConfig {
  std::size_t n_trials = 300;
  double gs_fraction = 1.0 / 3.0;
  const Corpus* corpus = nullptr;
  Scoring scoring = Scoring::Accuracy;
  std::uint64_t seed = 0;

  void validate() const;
};

// Item ids for one contest. Each trial is GS with probability gs_fraction;
// no two trials share a source. When the drawn set has no unseen source left
// the other set is used; StreamError when both are exhausted.
std::vector<ItemId> sample_trial_stream(const ContestConfig& config, Rng& rng);
std::vector<ItemId> sample_trial_stream(const ContestConfig& config);

struct SimulationTrace {
  std::vector<double> evidence;
  std::vector<double> criterion;  // criterion in force when the trial was answered
  double final_criterion = 0.0;
};

// Each trial consumes the same number of draws whatever the outcome, so two
// runs with equal seeds see identical noise trial by trial.
std::vector<Judgment> simulate_annotator(const AnnotatorProfile& profile,
                                         std::span<const ItemId> stream, const Corpus& corpus,
                                         ResponseMode mode, Rng& rng,
                                         const AnnotatorId& annotator_id = "a0",
                                         SimulationTrace* trace = nullptr);

// 1 - (outcome - belief)^2
template <typename Scalar>
Scalar score_quadratic(Scalar belief, int outcome) {
  const Scalar miss = static_cast<Scalar>(outcome) - belief;
  return Scalar(1) - miss * miss;
}

struct LeaderboardEntry {
  AnnotatorId annotator_id;
  double performance = 0.0;
  std::size_t n_gs_trials = 0;
};

struct Leaderboard {
  std::vector<LeaderboardEntry> ranking;  // best first
  std::vector<std::string> warnings;
};

// Ranks annotators on their GS trials only: mean correctness in Binary mode,
// mean quadratic score in Belief mode. Ties go to the smaller annotator id.
Leaderboard leaderboard(const JudgmentTable& table, ResponseMode mode);

// Population of workers for one contest condition. d' is uniform on
// [d_prime_min, d_prime_max]; the remaining fields are shared.
struct PopulationSpec {
  std::size_t n_annotators = 200;
  double d_prime_min = 1.0;
  double d_prime_max = 2.0;
  double criterion_init = 0.0;
  double adaptation_rate = 0.2;
  double belief_slope = 4.0;
  double lapse_rate = 0.02;

  void validate() const;
};

// Annotator i is named "<prefix><i>" and simulated from
// derive_seed(master_seed, name): its profile draw, trial stream and
// responses. Output is identical for any `jobs`.
JudgmentTable simulate_population(const PopulationSpec& population, const ContestConfig& contest,
                                  ResponseMode mode, std::uint64_t master_seed,
                                  const std::string& id_prefix = "w", std::size_t jobs = 1);

}  // namespace crowdcal
