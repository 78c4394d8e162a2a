#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crowdcal/aggregation.hpp"
#include "crowdcal/core.hpp"
#include "crowdcal/metrics.hpp"

namespace crowdcal {

struct FeatureSpec {
  Eigen::Index dim = 2;
  double mu = 0.75;      // class means at +mu*1 and -mu*1
  double jitter = 0.05;  // copies of a source lie within this distance of each other
  std::uint64_t seed = 0;
};

// Stand-in inputs for the QA items: one class-conditional Gaussian draw per
// source, copied to every augmented item of that source with a bounded
// isotropic jitter.
struct SyntheticFeatures {
  std::vector<ItemId> ids;  // row order
  Eigen::MatrixXd rows;     // one item per row
  std::map<ItemId, Eigen::Index> index;

  Eigen::Index dim() const { return rows.cols(); }
  Eigen::Index row_of(const ItemId& id) const;
};

SyntheticFeatures make_features(const Corpus& corpus, const FeatureSpec& spec,
                                ItemSet set = ItemSet::QA);

struct Split {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::set<SourceId> test_sources;
  std::vector<ItemId> train_items;
  std::vector<ItemId> test_items;
  std::set<SourceId> train_sources;
};

struct FoldPlan {
  std::size_t k_folds = 5;
  std::size_t n_repeats = 1;
  std::uint64_t seed = 0;
  std::vector<Split> splits;  // repeat-major
};

// Grouped (whole sources), stratified folds. Each repeat deals shuffled
// positive and negative sources round-robin into k folds, so every source is
// tested once per repeat. Throws if any split's positive fraction strays more
// than `tolerance` from the corpus prevalence.
FoldPlan make_folds(const Corpus& corpus, std::size_t k_folds, std::size_t n_repeats,
                    std::uint64_t seed, double tolerance = 0.02, ItemSet set = ItemSet::QA);

struct LearnerConfig {
  std::size_t epochs = 20;
  double learning_rate = 0.1;
  double l2_strength = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double logit(const Eigen::Ref<const Eigen::VectorXd>& x) const { return weights.dot(x) + bias; }
  Eigen::ArrayXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
};

// Mean soft-label cross-entropy -[q ln y + (1-q) ln(1-y)] plus
// (l2/2)|w|^2; the bias is not penalised.
double soft_label_loss(const LinearModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::ArrayXd>& targets, double l2);

struct LossGradient {
  Eigen::VectorXd weights;
  double bias = 0.0;
};

LossGradient soft_label_gradient(const LinearModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::ArrayXd>& targets, double l2);

struct TrainingResult {
  LinearModel model;
  std::vector<double> epoch_loss;  // full training loss after each epoch
};

// Mini-batch gradient descent from zero weights; the shuffle of epoch e is
// drawn from derive_seed(cfg.seed, e). Throws TrainingError if the loss
// becomes non-finite.
TrainingResult train_soft_label_classifier(const SyntheticFeatures& features,
                                           const WocDataset& labels,
                                           std::span<const ItemId> train_items,
                                           const LearnerConfig& cfg);

struct ModelEvaluation {
  ErrorRates rates;
  double ece = 0.0;
  Eigen::ArrayXd predictions;
};

// Predictions on the test items, classified at 0.5, scored against truth.
// Throws ContractError if any test source is also a training source.
ModelEvaluation evaluate_model(const LinearModel& model, const SyntheticFeatures& features,
                               const Split& split, const Corpus& corpus,
                               const EceConfig& ece_cfg = {});

struct HyperparameterGrid {
  std::vector<std::size_t> epochs{5, 10, 20, 40};
  std::vector<double> learning_rates{0.05, 0.1, 0.5};
  std::vector<double> l2_strengths{1e-4, 1e-3, 1e-2};
  std::vector<std::size_t> batch_sizes{16, 32};

  std::vector<LearnerConfig> cells(std::uint64_t seed) const;
};

struct GridCellScore {
  LearnerConfig config;
  std::optional<double> mean_loss;  // absent when training failed
};

struct SearchResult {
  LearnerConfig best;
  double best_loss = 0.0;
  std::vector<GridCellScore> scores;
  std::vector<std::string> warnings;
};

// Exhaustive search; each cell is scored by mean held-out cross-entropy
// against the crowd labels. Split i is trained on labels[i % labels.size()].
// Ties prefer fewer epochs, then a smaller learning rate.
SearchResult hyperparameter_search(std::span<const LearnerConfig> grid,
                                   const SyntheticFeatures& features,
                                   std::span<const WocDataset> labels, const FoldPlan& folds,
                                   std::size_t jobs = 1);

enum class Pairing : std::uint8_t { OneToOne, Crossed };

struct ConditionKey {
  Variant variant = Variant::BC;
  double gs_prevalence = 0.0;
  auto operator<=>(const ConditionKey&) const = default;
};

struct ModelJobResult {
  std::size_t split = 0;
  std::size_t replicate = 0;
  LinearModel model;
  ModelEvaluation evaluation;
};

struct VariantModelSummary {
  ConditionKey key;
  LearnerConfig config;
  std::optional<ConfidenceInterval> miss;
  std::optional<ConfidenceInterval> fa;
  std::optional<ConfidenceInterval> ece;
  std::vector<ModelJobResult> jobs;
};

struct PipelineOptions {
  FoldPlan search_folds;
  FoldPlan eval_folds;
  std::vector<LearnerConfig> grid;
  Pairing pairing = Pairing::OneToOne;
  EceConfig ece;
  std::size_t jobs = 1;
};

// For each condition: pick hyperparameters on the search folds, then train
// and evaluate one model per (split, replicate) job.
std::vector<VariantModelSummary> pipeline_experiment(
    const std::map<ConditionKey, std::vector<WocDataset>>& matrix,
    const SyntheticFeatures& features, const Corpus& corpus, const PipelineOptions& options);

}  // namespace crowdcal
