#include "crowdcal/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "crowdcal/error.hpp"
#include "crowdcal/parallel.hpp"
#include "crowdcal/random.hpp"
#include "crowdcal/recalibration.hpp"

namespace crowdcal {

Eigen::Index SyntheticFeatures::row_of(const ItemId& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw ContractError("no features for item " + id);
  return it->second;
}

SyntheticFeatures make_features(const Corpus& corpus, const FeatureSpec& spec, ItemSet set) {
  if (spec.dim < 1) throw ContractError("feature dimension must be >= 1");
  if (!(spec.jitter >= 0.0)) throw ContractError("jitter must be >= 0");
  const auto items = corpus.subset(set);
  SyntheticFeatures f;
  f.rows.resize(static_cast<Eigen::Index>(items.size()), spec.dim);
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::map<SourceId, Eigen::VectorXd> base;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Item& item = *items[i];
    auto it = base.find(item.source_id);
    if (it == base.end()) {
      Eigen::VectorXd centre = Eigen::VectorXd::Constant(spec.dim, item.true_label ? spec.mu : -spec.mu);
      for (Eigen::Index d = 0; d < spec.dim; ++d) centre[d] += normal(rng);
      it = base.emplace(item.source_id, std::move(centre)).first;
    }
    // Offset of length at most jitter/2, so two copies are within jitter.
    Eigen::VectorXd dir(spec.dim);
    for (Eigen::Index d = 0; d < spec.dim; ++d) dir[d] = normal(rng);
    const double norm = dir.norm();
    const double radius = 0.5 * spec.jitter * unit(rng);
    const auto row = static_cast<Eigen::Index>(i);
    f.rows.row(row) = it->second + (norm > 0.0 ? Eigen::VectorXd(dir * (radius / norm))
                                                : Eigen::VectorXd::Zero(spec.dim));
    f.ids.push_back(item.id);
    f.index.emplace(item.id, row);
  }
  return f;
}

FoldPlan make_folds(const Corpus& corpus, std::size_t k_folds, std::size_t n_repeats,
                    std::uint64_t seed, double tolerance, ItemSet set) {
  if (k_folds < 2) throw ContractError("k_folds must be >= 2");
  if (n_repeats < 1) throw ContractError("n_repeats must be >= 1");
  const auto items = corpus.subset(set);
  std::vector<SourceId> sources[2];
  std::map<SourceId, std::vector<const Item*>> copies;
  for (const Item* item : items) {
    auto& c = copies[item->source_id];
    if (c.empty()) sources[item->true_label].push_back(item->source_id);
    c.push_back(item);
  }
  for (int cls : {0, 1}) {
    if (sources[cls].size() < k_folds) {
      throw ContractError("only " + std::to_string(sources[cls].size()) + " " +
                          (cls ? "positive" : "negative") + " sources for " +
                          std::to_string(k_folds) + " folds");
    }
  }
  const double prevalence =
      static_cast<double>(std::count_if(items.begin(), items.end(),
                                        [](const Item* i) { return i->true_label == 1; })) /
      static_cast<double>(items.size());

  FoldPlan plan;
  plan.k_folds = k_folds;
  plan.n_repeats = n_repeats;
  plan.seed = seed;
  double worst = 0.0;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    std::vector<SourceId> shuffled[2] = {sources[0], sources[1]};
    std::shuffle(shuffled[1].begin(), shuffled[1].end(), rng);
    std::shuffle(shuffled[0].begin(), shuffled[0].end(), rng);
    for (std::size_t f = 0; f < k_folds; ++f) {
      Split split;
      split.repeat = r;
      split.fold = f;
      for (int cls : {1, 0}) {
        for (std::size_t s = 0; s < shuffled[cls].size(); ++s) {
          (s % k_folds == f ? split.test_sources : split.train_sources).insert(shuffled[cls][s]);
        }
      }
      std::size_t test_pos = 0, train_pos = 0;
      for (const Item* item : items) {
        if (split.test_sources.contains(item->source_id)) {
          split.test_items.push_back(item->id);
          test_pos += static_cast<std::size_t>(item->true_label);
        } else {
          split.train_items.push_back(item->id);
          train_pos += static_cast<std::size_t>(item->true_label);
        }
      }
      const double test_frac =
          static_cast<double>(test_pos) / static_cast<double>(split.test_items.size());
      const double train_frac =
          static_cast<double>(train_pos) / static_cast<double>(split.train_items.size());
      worst = std::max({worst, std::abs(test_frac - prevalence), std::abs(train_frac - prevalence)});
      plan.splits.push_back(std::move(split));
    }
  }
  if (worst > tolerance + 1e-12) {
    throw ContractError("stratification infeasible: best achievable deviation " +
                        std::to_string(worst) + " exceeds " + std::to_string(tolerance));
  }
  return plan;
}

void LearnerConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be > 0");
  if (!(l2_strength >= 0.0)) throw ContractError("l2_strength must be >= 0");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
}

Eigen::ArrayXd LinearModel::predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  const Eigen::ArrayXd z = ((x * weights).array() + bias);
  return z.unaryExpr([](double v) { return logistic(v); });
}

double soft_label_loss(const LinearModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::ArrayXd>& targets, double l2) {
  const Eigen::ArrayXd z = (x * model.weights).array() + model.bias;
  const double ce = (z.unaryExpr([](double v) { return softplus(v); }) - targets * z).mean();
  return ce + 0.5 * l2 * model.weights.squaredNorm();
}

LossGradient soft_label_gradient(const LinearModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::ArrayXd>& targets, double l2) {
  const Eigen::ArrayXd resid = model.predict(x) - targets;
  const double n = static_cast<double>(x.rows());
  LossGradient g;
  g.weights = x.transpose() * resid.matrix() / n + l2 * model.weights;
  g.bias = resid.sum() / n;
  return g;
}

namespace {

struct Design {
  Eigen::MatrixXd x;
  Eigen::ArrayXd q;
};

Design design_for(const SyntheticFeatures& features, const WocDataset& labels,
                  std::span<const ItemId> items) {
  Design d;
  d.x.resize(static_cast<Eigen::Index>(items.size()), features.dim());
  d.q.resize(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto it = labels.labels.find(items[i]);
    if (it == labels.labels.end()) throw ContractError("no crowd label for item " + items[i]);
    const auto r = static_cast<Eigen::Index>(i);
    d.x.row(r) = features.rows.row(features.row_of(items[i]));
    d.q[r] = it->second;
  }
  return d;
}

TrainingResult train_on(const Design& d, const LearnerConfig& cfg) {
  cfg.validate();
  if (d.x.rows() == 0) throw ContractError("empty training split");
  TrainingResult result;
  LinearModel& model = result.model;
  model.weights = Eigen::VectorXd::Zero(d.x.cols());
  model.bias = 0.0;

  const auto n = static_cast<std::size_t>(d.x.rows());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::MatrixXd xb;
  Eigen::ArrayXd qb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const auto m = static_cast<Eigen::Index>(stop - start);
      xb.resize(m, d.x.cols());
      qb.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        xb.row(i) = d.x.row(order[start + static_cast<std::size_t>(i)]);
        qb[i] = d.q[order[start + static_cast<std::size_t>(i)]];
      }
      const LossGradient g = soft_label_gradient(model, xb, qb, cfg.l2_strength);
      model.weights -= cfg.learning_rate * g.weights;
      model.bias -= cfg.learning_rate * g.bias;
    }
    const double loss = soft_label_loss(model, d.x, d.q, cfg.l2_strength);
    if (!std::isfinite(loss) || !model.weights.allFinite() || !std::isfinite(model.bias)) {
      throw TrainingError(epoch, "training diverged at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(loss);
  }
  return result;
}

void check_disjoint(const Split& split, const Corpus& corpus) {
  for (const SourceId& s : split.test_sources) {
    if (split.train_sources.contains(s)) {
      throw ContractError("source " + s + " is in both train and test");
    }
  }
  for (const ItemId& id : split.test_items) {
    if (split.train_sources.contains(corpus.at(id).source_id)) {
      throw ContractError("test item " + id + " shares a source with the training split");
    }
  }
}

}  // namespace

TrainingResult train_soft_label_classifier(const SyntheticFeatures& features,
                                           const WocDataset& labels,
                                           std::span<const ItemId> train_items,
                                           const LearnerConfig& cfg) {
  return train_on(design_for(features, labels, train_items), cfg);
}

ModelEvaluation evaluate_model(const LinearModel& model, const SyntheticFeatures& features,
                               const Split& split, const Corpus& corpus, const EceConfig& ece_cfg) {
  check_disjoint(split, corpus);
  const auto n = static_cast<Eigen::Index>(split.test_items.size());
  Eigen::MatrixXd x(n, features.dim());
  Eigen::ArrayXi truth(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ItemId& id = split.test_items[static_cast<std::size_t>(i)];
    x.row(i) = features.rows.row(features.row_of(id));
    truth[i] = corpus.at(id).true_label;
  }
  ModelEvaluation ev;
  ev.predictions = model.predict(x);
  const Eigen::ArrayXi labels = ev.predictions.unaryExpr([](double p) { return classify(p, 0.5); });
  ev.rates = error_rates(labels, truth);
  ev.ece = ece(ev.predictions, truth, ece_cfg);
  return ev;
}

std::vector<LearnerConfig> HyperparameterGrid::cells(std::uint64_t seed) const {
  std::vector<LearnerConfig> out;
  for (std::size_t e : epochs) {
    for (double lr : learning_rates) {
      for (double l2 : l2_strengths) {
        for (std::size_t b : batch_sizes) out.push_back({e, lr, l2, b, seed});
      }
    }
  }
  return out;
}

SearchResult hyperparameter_search(std::span<const LearnerConfig> grid,
                                   const SyntheticFeatures& features,
                                   std::span<const WocDataset> labels, const FoldPlan& folds,
                                   std::size_t jobs) {
  if (grid.empty()) throw ContractError("empty hyperparameter grid");
  if (labels.empty()) throw ContractError("no label datasets for the search");
  if (folds.splits.empty()) throw ContractError("no folds for the search");

  // Design matrices per split are shared by every cell.
  std::vector<Design> train(folds.splits.size()), test(folds.splits.size());
  for (std::size_t s = 0; s < folds.splits.size(); ++s) {
    const WocDataset& ds = labels[s % labels.size()];
    train[s] = design_for(features, ds, folds.splits[s].train_items);
    test[s] = design_for(features, ds, folds.splits[s].test_items);
  }

  SearchResult result;
  result.scores.resize(grid.size());
  std::vector<std::string> failures(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t c) {
    GridCellScore& score = result.scores[c];
    score.config = grid[c];
    double total = 0.0;
    try {
      for (std::size_t s = 0; s < folds.splits.size(); ++s) {
        LearnerConfig cfg = grid[c];
        cfg.seed = derive_seed(grid[c].seed, static_cast<std::uint64_t>(s));
        const TrainingResult trained = train_on(train[s], cfg);
        total += soft_label_loss(trained.model, test[s].x, test[s].q, 0.0);
      }
      score.mean_loss = total / static_cast<double>(folds.splits.size());
    } catch (const Error& e) {
      failures[c] = e.what();
    }
  });

  const GridCellScore* best = nullptr;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const GridCellScore& s = result.scores[c];
    if (!s.mean_loss) {
      result.warnings.push_back("grid cell " + std::to_string(c) + " excluded: " + failures[c]);
      continue;
    }
    auto rank = [](const GridCellScore& g) {
      return std::tuple{*g.mean_loss, g.config.epochs, g.config.learning_rate,
                        g.config.l2_strength, g.config.batch_size};
    };
    if (!best || rank(s) < rank(*best)) best = &s;
  }
  if (!best) throw TrainingError(0, "every hyperparameter grid cell failed");
  result.best = best->config;
  result.best_loss = *best->mean_loss;
  return result;
}

std::vector<VariantModelSummary> pipeline_experiment(
    const std::map<ConditionKey, std::vector<WocDataset>>& matrix,
    const SyntheticFeatures& features, const Corpus& corpus, const PipelineOptions& options) {
  if (matrix.empty()) throw ContractError("empty condition matrix");
  for (const auto& [key, datasets] : matrix) {
    if (datasets.empty()) {
      throw ContractError("no datasets for variant " + std::string(to_string(key.variant)) +
                          " at GS prevalence " + std::to_string(key.gs_prevalence));
    }
  }
  std::vector<VariantModelSummary> out;
  for (const auto& [key, datasets] : matrix) {
    VariantModelSummary summary;
    summary.key = key;
    summary.config =
        hyperparameter_search(options.grid, features, datasets, options.search_folds, options.jobs)
            .best;

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const auto& splits = options.eval_folds.splits;
    for (std::size_t s = 0; s < splits.size(); ++s) {
      if (options.pairing == Pairing::OneToOne) {
        pairs.emplace_back(s, s % datasets.size());
      } else {
        for (std::size_t r = 0; r < datasets.size(); ++r) pairs.emplace_back(s, r);
      }
    }
    summary.jobs.resize(pairs.size());
    parallel_for(pairs.size(), options.jobs, [&](std::size_t j) {
      const auto [s, r] = pairs[j];
      LearnerConfig cfg = summary.config;
      cfg.seed = derive_seed(summary.config.seed, static_cast<std::uint64_t>(j));
      const TrainingResult trained =
          train_soft_label_classifier(features, datasets[r], splits[s].train_items, cfg);
      summary.jobs[j] = {s, datasets[r].replicate_index, trained.model,
                         evaluate_model(trained.model, features, splits[s], corpus, options.ece)};
    });

    std::vector<double> miss, fa, ece_values;
    for (const auto& job : summary.jobs) {
      if (job.evaluation.rates.miss_rate) miss.push_back(*job.evaluation.rates.miss_rate);
      if (job.evaluation.rates.false_alarm_rate) fa.push_back(*job.evaluation.rates.false_alarm_rate);
      ece_values.push_back(job.evaluation.ece);
    }
    if (miss.size() >= 2) summary.miss = replicate_ci(miss);
    if (fa.size() >= 2) summary.fa = replicate_ci(fa);
    if (ece_values.size() >= 2) summary.ece = replicate_ci(ece_values);
    out.push_back(std::move(summary));
  }
  return out;
}

}  // namespace crowdcal
