#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crowdcal/aggregation.hpp"
#include "crowdcal/annotator.hpp"
#include "crowdcal/core.hpp"
#include "crowdcal/downstream.hpp"
#include "crowdcal/manifest.hpp"
#include "crowdcal/metrics.hpp"
#include "crowdcal/recalibration.hpp"

namespace crowdcal {

// One GS feedback condition. The GS set differs between conditions only in
// how many rotated copies of each negative source it holds.
struct ConditionSpec {
  std::string name;
  std::size_t gs_negative_augmentation = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 20240601;
  CorpusSpec corpus;
  std::vector<ConditionSpec> conditions{{"gs20", 3}, {"gs50", 0}};

  PopulationSpec population;
  std::size_t n_trials = 300;
  double gs_fraction = 1.0 / 3.0;
  std::size_t min_trials = 200;

  std::size_t k = 9;
  std::size_t n_replicates = 100;
  Sampling sampling = Sampling::WithoutReplacement;
  std::vector<std::size_t> sweep_sizes{1, 2, 3, 4, 5, 6, 7, 8, 9};

  ClampPolicy clamp;
  FitOptions fit;

  std::size_t ece_bins = 10;
  std::size_t curve_bins = 7;
  double ci_level = 0.95;

  FeatureSpec features;
  std::size_t k_folds = 5;
  std::size_t search_repeats = 6;
  std::size_t eval_repeats = 20;
  HyperparameterGrid grid;
  Pairing pairing = Pairing::OneToOne;

  std::size_t jobs = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  // sha256 of the canonical JSON form.
  std::string hash() const;
};

// Applies "a.b.c=value" to a config document. The value is parsed as JSON
// when it can be, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

struct ConditionRun {
  ConditionSpec spec;
  Corpus corpus;
  JudgmentTable bc;   // binary judgments
  JudgmentTable eb;   // belief judgments
  JudgmentTable reb;  // individually recalibrated beliefs
  std::vector<FitRecord> fits;
  std::map<Variant, std::vector<WocDataset>> datasets;
  // Replicates whose crowd fit failed; left out of rEB_CR summaries.
  std::vector<std::size_t> excluded_crowd_replicates;
  std::vector<std::string> warnings;

  double gs_prevalence() const { return corpus.gs_prevalence(); }
};

Corpus condition_corpus(const ExperimentConfig& cfg, const ConditionSpec& spec);

// Simulates BC and EB populations, filters them, recalibrates EB per worker.
ConditionRun simulate_condition(const ExperimentConfig& cfg, const ConditionSpec& spec);

// BC, EB and rEB_noCR replicates, then rEB_CR by crowd recalibration.
void aggregate_condition(const ExperimentConfig& cfg, ConditionRun& run);

// rEB_CR dataset for each rEB_noCR replicate; failed fits are skipped and
// their replicate indices returned through `excluded`.
std::vector<WocDataset> crowd_recalibrate_all(const std::vector<WocDataset>& reb,
                                              const Corpus& corpus, const ExperimentConfig& cfg,
                                              std::vector<FitRecord>* fits,
                                              std::vector<std::size_t>* excluded);

struct DatasetScore {
  Variant variant = Variant::BC;
  std::size_t replicate = 0;
  ErrorRates rates;
  double ece = 0.0;
};

// QA-set error rates and ECE of one dataset.
DatasetScore score_dataset(const WocDataset& dataset, const Corpus& corpus, std::size_t ece_bins);

struct VariantSummary {
  Variant variant = Variant::BC;
  double gs_prevalence = 0.0;
  std::optional<ConfidenceInterval> miss;
  std::optional<ConfidenceInterval> fa;
  std::optional<ConfidenceInterval> ece;
  std::vector<DatasetScore> scores;
};

VariantSummary summarize_variant(const std::vector<WocDataset>& datasets, const Corpus& corpus,
                                 const ExperimentConfig& cfg);

// Per-annotator QA miss and false-alarm rates, with CIs across annotators.
struct IndividualSummary {
  std::string label;  // BC, EB or rEB
  double gs_prevalence = 0.0;
  std::optional<ConfidenceInterval> miss;
  std::optional<ConfidenceInterval> fa;
  std::size_t n_annotators = 0;
};

IndividualSummary summarize_individuals(const JudgmentTable& table, const std::string& label,
                                        double gs_prevalence, double ci_level);

// Miss, false alarm and ECE over crowd sizes. rEB_CR refits the crowd
// transform at every size and replicate.
std::vector<SweepPoint> sweep_variant(const ConditionRun& run, Variant variant,
                                      const ExperimentConfig& cfg);

std::map<std::string, double> dataset_metrics(const WocDataset& dataset, const Corpus& corpus,
                                              std::size_t ece_bins);

// Model metrics for every (variant, condition) over QA features.
std::vector<VariantModelSummary> run_downstream(const ExperimentConfig& cfg,
                                                const std::vector<ConditionRun>& runs,
                                                std::span<const Variant> variants);

struct CommandInputs {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> judgments;
  std::optional<std::filesystem::path> woc;
};

inline constexpr const char* kSubcommands[] = {"simulate", "aggregate", "recalibrate",
                                               "evaluate", "train",     "sweep",
                                               "reproduce-study2", "report"};

// Runs one subcommand into `out`, writing every artifact through a
// RunDirectory and the manifest last (marked incomplete on failure).
RunManifest run_command(const std::string& subcommand, const ExperimentConfig& cfg,
                        const std::filesystem::path& out, const CommandInputs& inputs = {});

}  // namespace crowdcal
