#include "crowdcal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "crowdcal/csv.hpp"
#include "crowdcal/error.hpp"
#include "crowdcal/random.hpp"

namespace crowdcal {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Sampling s) {
  return s == Sampling::WithReplacement ? "with_replacement" : "without_replacement";
}

Sampling parse_sampling(const std::string& s) {
  if (s == "without_replacement") return Sampling::WithoutReplacement;
  if (s == "with_replacement") return Sampling::WithReplacement;
  throw ConfigError("unknown sampling '" + s + "'");
}

std::string_view to_string(Pairing p) { return p == Pairing::Crossed ? "crossed" : "one_to_one"; }

Pairing parse_pairing(const std::string& s) {
  if (s == "one_to_one") return Pairing::OneToOne;
  if (s == "crossed") return Pairing::Crossed;
  throw ConfigError("unknown pairing '" + s + "'");
}

// Every key the user supplies must exist in the defaults; arrays are leaves.
void check_known_keys(const json& user, const json& reference, const std::string& path) {
  if (!user.is_object()) return;
  if (!reference.is_object()) throw ConfigError("config key '" + path + "' is not a section");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    if (value.is_object()) check_known_keys(value, reference.at(key), here);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (conditions.empty()) throw ConfigError("at least one condition is required");
  std::set<std::string> names;
  for (const auto& c : conditions) {
    if (c.name.empty()) throw ConfigError("condition names must be non-empty");
    if (!names.insert(c.name).second) throw ConfigError("duplicate condition '" + c.name + "'");
  }
  try {
    population.validate();
    clamp.validate();
    for (const auto& cell : grid.cells(0)) cell.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (n_trials == 0) throw ConfigError("n_trials must be positive");
  if (!(gs_fraction > 0.0 && gs_fraction <= 1.0)) throw ConfigError("gs_fraction must be in (0, 1]");
  if (k == 0) throw ConfigError("k must be positive");
  if (n_replicates < 2) throw ConfigError("n_replicates must be at least 2");
  if (sweep_sizes.empty()) throw ConfigError("sweep_sizes must be non-empty");
  for (std::size_t s : sweep_sizes) {
    if (s == 0) throw ConfigError("sweep sizes must be positive");
  }
  if (!(fit.tol > 0.0) || fit.max_iter <= 0) throw ConfigError("fit tolerance and max_iter must be positive");
  if (ece_bins == 0 || curve_bins == 0) throw ConfigError("bin counts must be positive");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must be in (0, 1)");
  if (features.dim <= 0) throw ConfigError("feature dim must be positive");
  if (!(features.jitter >= 0.0)) throw ConfigError("feature jitter must be non-negative");
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  if (search_repeats == 0 || eval_repeats == 0) throw ConfigError("fold repeats must be positive");
  if (grid.epochs.empty() || grid.learning_rates.empty() || grid.l2_strengths.empty() ||
      grid.batch_sizes.empty()) {
    throw ConfigError("every hyperparameter grid axis needs a value");
  }
  if (jobs == 0) throw ConfigError("jobs must be positive");
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["corpus"] = {{"qa_unique_pos", corpus.qa_unique_pos},
                 {"qa_unique_neg", corpus.qa_unique_neg},
                 {"gs_unique_pos", corpus.gs_unique_pos},
                 {"gs_unique_neg", corpus.gs_unique_neg},
                 {"qa_negative_augmentation", corpus.qa_negative_augmentation}};
  j["conditions"] = ordered_json::array();
  for (const auto& c : conditions) {
    j["conditions"].push_back(
        {{"name", c.name}, {"gs_negative_augmentation", c.gs_negative_augmentation}});
  }
  j["simulation"] = {{"n_annotators", population.n_annotators},
                     {"d_prime_min", population.d_prime_min},
                     {"d_prime_max", population.d_prime_max},
                     {"criterion_init", population.criterion_init},
                     {"adaptation_rate", population.adaptation_rate},
                     {"belief_slope", population.belief_slope},
                     {"lapse_rate", population.lapse_rate},
                     {"n_trials", n_trials},
                     {"gs_fraction", gs_fraction},
                     {"min_trials", min_trials}};
  j["aggregation"] = {{"k", k},
                      {"n_replicates", n_replicates},
                      {"sampling", to_string(sampling)},
                      {"sweep_sizes", sweep_sizes}};
  j["recalibration"] = {{"epsilon", clamp.epsilon}, {"tol", fit.tol}, {"max_iter", fit.max_iter}};
  j["metrics"] = {{"ece_bins", ece_bins}, {"curve_bins", curve_bins}, {"ci_level", ci_level}};
  j["downstream"] = {{"feature_dim", features.dim},
                     {"feature_mu", features.mu},
                     {"feature_jitter", features.jitter},
                     {"k_folds", k_folds},
                     {"search_repeats", search_repeats},
                     {"eval_repeats", eval_repeats},
                     {"pairing", to_string(pairing)},
                     {"grid",
                      {{"epochs", grid.epochs},
                       {"learning_rates", grid.learning_rates},
                       {"l2_strengths", grid.l2_strengths},
                       {"batch_sizes", grid.batch_sizes}}}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& user) {
  const json defaults = json(ExperimentConfig{}.to_json());
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  check_known_keys(user, defaults, "");
  json j = defaults;
  j.merge_patch(user);

  ExperimentConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.jobs = j.at("jobs").get<std::size_t>();
    const auto& co = j.at("corpus");
    c.corpus.qa_unique_pos = co.at("qa_unique_pos");
    c.corpus.qa_unique_neg = co.at("qa_unique_neg");
    c.corpus.gs_unique_pos = co.at("gs_unique_pos");
    c.corpus.gs_unique_neg = co.at("gs_unique_neg");
    c.corpus.qa_negative_augmentation = co.at("qa_negative_augmentation");
    c.conditions.clear();
    for (const auto& cond : j.at("conditions")) {
      c.conditions.push_back({cond.at("name").get<std::string>(),
                              cond.value("gs_negative_augmentation", std::size_t{0})});
    }
    const auto& s = j.at("simulation");
    c.population.n_annotators = s.at("n_annotators");
    c.population.d_prime_min = s.at("d_prime_min");
    c.population.d_prime_max = s.at("d_prime_max");
    c.population.criterion_init = s.at("criterion_init");
    c.population.adaptation_rate = s.at("adaptation_rate");
    c.population.belief_slope = s.at("belief_slope");
    c.population.lapse_rate = s.at("lapse_rate");
    c.n_trials = s.at("n_trials");
    c.gs_fraction = s.at("gs_fraction");
    c.min_trials = s.at("min_trials");
    const auto& a = j.at("aggregation");
    c.k = a.at("k");
    c.n_replicates = a.at("n_replicates");
    c.sampling = parse_sampling(a.at("sampling"));
    c.sweep_sizes = a.at("sweep_sizes").get<std::vector<std::size_t>>();
    const auto& r = j.at("recalibration");
    c.clamp.epsilon = r.at("epsilon");
    c.fit.tol = r.at("tol");
    c.fit.max_iter = r.at("max_iter");
    const auto& m = j.at("metrics");
    c.ece_bins = m.at("ece_bins");
    c.curve_bins = m.at("curve_bins");
    c.ci_level = m.at("ci_level");
    const auto& d = j.at("downstream");
    c.features.dim = d.at("feature_dim");
    c.features.mu = d.at("feature_mu");
    c.features.jitter = d.at("feature_jitter");
    c.k_folds = d.at("k_folds");
    c.search_repeats = d.at("search_repeats");
    c.eval_repeats = d.at("eval_repeats");
    c.pairing = parse_pairing(d.at("pairing"));
    const auto& g = d.at("grid");
    c.grid.epochs = g.at("epochs").get<std::vector<std::size_t>>();
    c.grid.learning_rates = g.at("learning_rates").get<std::vector<double>>();
    c.grid.l2_strengths = g.at("l2_strengths").get<std::vector<double>>();
    c.grid.batch_sizes = g.at("batch_sizes").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  ordered_json j = to_json();
  j.erase("jobs");  // results do not depend on the thread count
  return sha256_hex(j.dump());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("empty segment in override key '" + path + "'");
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = static_cast<std::size_t>(csv::parse_int(key));
      } catch (const Error&) {
        throw ConfigError("override '" + path + "' indexes an array with '" + key + "'");
      }
      if (idx >= node->size()) throw ConfigError("override '" + path + "' index out of range");
      node = &(*node)[idx];
    } else {
      if (!node->is_object()) *node = json::object();
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + path.string() + ": " + e.what());
    }
  }
  if (!overrides.empty()) {
    // Overrides land on the full document so list entries can be addressed.
    json full = json(ExperimentConfig{}.to_json());
    full.merge_patch(doc);
    for (const auto& o : overrides) apply_override(full, o);
    doc = std::move(full);
  }
  return ExperimentConfig::from_json(doc);
}

Corpus condition_corpus(const ExperimentConfig& cfg, const ConditionSpec& spec) {
  CorpusSpec cs = cfg.corpus;
  cs.gs_negative_augmentation = spec.gs_negative_augmentation;
  return build_corpus(cs);
}

namespace {

JudgmentTable simulate_mode(const ExperimentConfig& cfg, const ConditionSpec& spec,
                            const Corpus& corpus, ResponseMode mode) {
  ContestConfig contest;
  contest.n_trials = cfg.n_trials;
  contest.gs_fraction = cfg.gs_fraction;
  contest.corpus = &corpus;
  contest.scoring = mode == ResponseMode::Binary ? Scoring::Accuracy : Scoring::QuadraticBelief;
  const std::string tag = mode == ResponseMode::Binary ? "bc" : "eb";
  const std::uint64_t seed =
      derive_seed(cfg.seed, "population/" + spec.name + "/" + std::string(to_string(mode)));
  contest.seed = seed;
  return simulate_population(cfg.population, contest, mode, seed, spec.name + "-" + tag + "-w",
                             cfg.jobs);
}

ResamplingPlan plan_for(const ExperimentConfig& cfg, const std::string& condition, Variant v) {
  ResamplingPlan plan;
  plan.k = cfg.k;
  plan.n_replicates = cfg.n_replicates;
  plan.sampling = cfg.sampling;
  // rEB_CR reuses the rEB_noCR draws it recalibrates.
  const Variant base = v == Variant::rEB_CR ? Variant::rEB_noCR : v;
  plan.seed = derive_seed(cfg.seed, "woc/" + condition + "/" + std::string(to_string(base)));
  return plan;
}

const JudgmentTable& table_for(const ConditionRun& run, Variant v) {
  switch (v) {
    case Variant::BC: return run.bc;
    case Variant::EB: return run.eb;
    default: return run.reb;
  }
}

}  // namespace

ConditionRun simulate_condition(const ExperimentConfig& cfg, const ConditionSpec& spec) {
  ConditionRun run;
  run.spec = spec;
  run.corpus = condition_corpus(cfg, spec);
  for (ResponseMode mode : {ResponseMode::Binary, ResponseMode::Belief}) {
    const JudgmentTable raw = simulate_mode(cfg, spec, run.corpus, mode);
    JudgmentTable kept = filter_judgments(raw, cfg.min_trials);
    const std::size_t dropped = raw.by_annotator().size() - kept.by_annotator().size();
    if (dropped > 0) {
      run.warnings.push_back(spec.name + ": " + std::to_string(dropped) + " " +
                             std::string(to_string(mode)) + " annotators below min_trials");
    }
    (mode == ResponseMode::Binary ? run.bc : run.eb) = std::move(kept);
  }
  IndividualRecalibration rec = recalibrate_individual(run.eb, cfg.clamp, cfg.fit);
  run.reb = std::move(rec.table);
  for (const auto& [id, fit] : rec.fits) run.fits.push_back({"individual", id, fit});
  for (auto& w : rec.warnings) run.warnings.push_back(spec.name + ": " + w);
  return run;
}

std::vector<WocDataset> crowd_recalibrate_all(const std::vector<WocDataset>& reb,
                                              const Corpus& corpus, const ExperimentConfig& cfg,
                                              std::vector<FitRecord>* fits,
                                              std::vector<std::size_t>* excluded) {
  std::vector<WocDataset> out;
  for (const WocDataset& ds : reb) {
    try {
      CrowdRecalibration cr = recalibrate_crowd(ds, corpus, cfg.clamp, cfg.fit);
      if (fits) fits->push_back({"crowd", std::to_string(ds.replicate_index), cr.fit});
      out.push_back(std::move(cr.dataset));
    } catch (const Error&) {
      if (excluded) excluded->push_back(ds.replicate_index);
    }
  }
  return out;
}

void aggregate_condition(const ExperimentConfig& cfg, ConditionRun& run) {
  for (Variant v : {Variant::BC, Variant::EB, Variant::rEB_noCR}) {
    run.datasets[v] = generate_replicates(table_for(run, v), run.corpus,
                                          plan_for(cfg, run.spec.name, v), v, cfg.jobs);
  }
  run.excluded_crowd_replicates.clear();
  run.datasets[Variant::rEB_CR] = crowd_recalibrate_all(
      run.datasets[Variant::rEB_noCR], run.corpus, cfg, &run.fits, &run.excluded_crowd_replicates);
  if (!run.excluded_crowd_replicates.empty()) {
    run.warnings.push_back(run.spec.name + ": " +
                           std::to_string(run.excluded_crowd_replicates.size()) +
                           " rEB_CR replicates excluded after failed crowd fits");
  }
}

DatasetScore score_dataset(const WocDataset& dataset, const Corpus& corpus, std::size_t ece_bins) {
  const auto labels = labels_for(dataset, corpus, ItemSet::QA);
  const auto truth = truth_for(corpus, ItemSet::QA);
  std::map<ItemId, int> hard;
  for (const auto& [id, v] : labels) hard.emplace(id, classify(v));
  DatasetScore s;
  s.variant = dataset.variant;
  s.replicate = dataset.replicate_index;
  s.rates = error_rates(hard, truth);
  s.ece = ece(labels, truth, {ece_bins});
  return s;
}

namespace {

std::optional<ConfidenceInterval> ci_of(const std::vector<double>& values, double level) {
  if (values.size() < 2) return std::nullopt;
  return replicate_ci(values, level);
}

}  // namespace

VariantSummary summarize_variant(const std::vector<WocDataset>& datasets, const Corpus& corpus,
                                 const ExperimentConfig& cfg) {
  VariantSummary out;
  out.gs_prevalence = corpus.gs_prevalence();
  std::vector<double> miss, fa, e;
  for (const WocDataset& ds : datasets) {
    out.variant = ds.variant;
    DatasetScore s = score_dataset(ds, corpus, cfg.ece_bins);
    if (s.rates.miss_rate) miss.push_back(*s.rates.miss_rate);
    if (s.rates.false_alarm_rate) fa.push_back(*s.rates.false_alarm_rate);
    e.push_back(s.ece);
    out.scores.push_back(std::move(s));
  }
  out.miss = ci_of(miss, cfg.ci_level);
  out.fa = ci_of(fa, cfg.ci_level);
  out.ece = ci_of(e, cfg.ci_level);
  return out;
}

IndividualSummary summarize_individuals(const JudgmentTable& table, const std::string& label,
                                        double gs_prevalence, double ci_level) {
  IndividualSummary out;
  out.label = label;
  out.gs_prevalence = gs_prevalence;
  std::vector<double> miss, fa;
  for (const auto& [annotator, rows] : table.by_annotator()) {
    std::size_t pos = 0, missed = 0, neg = 0, alarms = 0;
    for (std::size_t i : rows) {
      const Judgment& j = table.judgments()[i];
      if (j.set != ItemSet::QA) continue;
      const int said = classify(j.value);
      if (j.true_label == 1) {
        ++pos;
        missed += said == 0;
      } else {
        ++neg;
        alarms += said == 1;
      }
    }
    if (pos > 0) miss.push_back(static_cast<double>(missed) / static_cast<double>(pos));
    if (neg > 0) fa.push_back(static_cast<double>(alarms) / static_cast<double>(neg));
    ++out.n_annotators;
  }
  out.miss = ci_of(miss, ci_level);
  out.fa = ci_of(fa, ci_level);
  return out;
}

std::map<std::string, double> dataset_metrics(const WocDataset& dataset, const Corpus& corpus,
                                              std::size_t ece_bins) {
  const DatasetScore s = score_dataset(dataset, corpus, ece_bins);
  std::map<std::string, double> m;
  if (s.rates.miss_rate) m["miss"] = *s.rates.miss_rate;
  if (s.rates.false_alarm_rate) m["fa"] = *s.rates.false_alarm_rate;
  m["ece"] = s.ece;
  return m;
}

std::vector<SweepPoint> sweep_variant(const ConditionRun& run, Variant variant,
                                      const ExperimentConfig& cfg) {
  const Variant generated = variant == Variant::rEB_CR ? Variant::rEB_noCR : variant;
  MetricsCallback callback;
  if (variant == Variant::rEB_CR) {
    callback = [&](const WocDataset& ds) -> std::map<std::string, double> {
      try {
        const CrowdRecalibration cr = recalibrate_crowd(ds, run.corpus, cfg.clamp, cfg.fit);
        return dataset_metrics(cr.dataset, run.corpus, cfg.ece_bins);
      } catch (const Error&) {
        return {};
      }
    };
  } else {
    callback = [&](const WocDataset& ds) { return dataset_metrics(ds, run.corpus, cfg.ece_bins); };
  }
  return crowd_size_sweep(table_for(run, variant), run.corpus, cfg.sweep_sizes,
                          plan_for(cfg, run.spec.name, variant), generated, callback, cfg.jobs);
}

std::vector<VariantModelSummary> run_downstream(const ExperimentConfig& cfg,
                                                const std::vector<ConditionRun>& runs,
                                                std::span<const Variant> variants) {
  if (runs.empty()) throw ContractError("no condition runs to train on");
  const Corpus& corpus = runs.front().corpus;
  FeatureSpec fs = cfg.features;
  fs.seed = derive_seed(cfg.seed, "features");
  const SyntheticFeatures features = make_features(corpus, fs);

  PipelineOptions options;
  options.search_folds =
      make_folds(corpus, cfg.k_folds, cfg.search_repeats, derive_seed(cfg.seed, "folds/search"));
  options.eval_folds =
      make_folds(corpus, cfg.k_folds, cfg.eval_repeats, derive_seed(cfg.seed, "folds/eval"));
  options.grid = cfg.grid.cells(derive_seed(cfg.seed, "learner"));
  options.pairing = cfg.pairing;
  options.ece = {cfg.ece_bins};
  options.jobs = cfg.jobs;

  std::map<ConditionKey, std::vector<WocDataset>> matrix;
  for (const ConditionRun& run : runs) {
    for (Variant v : variants) {
      const auto it = run.datasets.find(v);
      if (it == run.datasets.end() || it->second.empty()) {
        throw ContractError("no " + std::string(to_string(v)) + " datasets for " + run.spec.name);
      }
      matrix[{v, run.gs_prevalence()}] = it->second;
    }
  }
  return pipeline_experiment(matrix, features, corpus, options);
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct Results {
  std::vector<ConditionRun> runs;
  std::map<std::string, std::map<Variant, VariantSummary>> crowd;
  std::map<std::string, std::vector<IndividualSummary>> individual;
  std::map<std::string, std::map<Variant, std::vector<SweepPoint>>> sweeps;
  std::vector<VariantModelSummary> models;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

std::string fmt_ci(const std::optional<ConfidenceInterval>& ci) {
  if (!ci) return "n/a";
  return fmt(ci->mean) + " [" + fmt(ci->lower) + ", " + fmt(ci->upper) + "]";
}

ordered_json ci_json(const std::optional<ConfidenceInterval>& ci) {
  if (!ci) return nullptr;
  return {{"mean", ci->mean}, {"lower", ci->lower}, {"upper", ci->upper}, {"sd", ci->sd},
          {"n", ci->n}};
}

void write_leaderboard(RunDirectory& dir, const std::string& name, const JudgmentTable& table,
                       ResponseMode mode) {
  const Leaderboard board = leaderboard(table, mode);
  dir.write(name, [&](std::ostream& out) {
    csv::write_row(out, {"rank", "annotator_id", "performance", "n_gs_trials"});
    std::size_t rank = 1;
    for (const auto& e : board.ranking) {
      csv::write_row(out, {std::to_string(rank++), e.annotator_id, csv::format_double(e.performance),
                           std::to_string(e.n_gs_trials)});
    }
  });
}

void write_datasets(RunDirectory& dir, const std::string& name, const ConditionRun& run,
                    std::initializer_list<Variant> variants) {
  std::vector<WocDataset> all;
  for (Variant v : variants) {
    const auto it = run.datasets.find(v);
    if (it != run.datasets.end()) all.insert(all.end(), it->second.begin(), it->second.end());
  }
  dir.write(name, [&](std::ostream& out) { write_woc_csv(out, all); });
}

std::vector<MetricRow> metric_rows(const VariantSummary& s) {
  std::vector<MetricRow> rows;
  const std::string v(to_string(s.variant));
  for (const DatasetScore& d : s.scores) {
    rows.push_back({v, s.gs_prevalence, std::to_string(d.replicate), d.rates.miss_rate,
                    d.rates.false_alarm_rate, d.ece, std::nullopt});
  }
  auto pick = [](const std::optional<ConfidenceInterval>& ci,
                 double ConfidenceInterval::*field) -> std::optional<double> {
    if (!ci) return std::nullopt;
    return (*ci).*field;
  };
  for (auto [label, field] : {std::pair{"mean", &ConfidenceInterval::mean},
                              std::pair{"lower", &ConfidenceInterval::lower},
                              std::pair{"upper", &ConfidenceInterval::upper}}) {
    rows.push_back({v, s.gs_prevalence, label, pick(s.miss, field), pick(s.fa, field),
                    pick(s.ece, field), std::nullopt});
  }
  return rows;
}

// Display curves pool every replicate's QA labels; the ECE curves hold one
// curve per replicate keyed "<variant>/<replicate>" so each reported ECE can
// be recomputed from its bins.
void write_curves(RunDirectory& dir, const ExperimentConfig& cfg, const ConditionRun& run) {
  const auto truth = truth_for(run.corpus, ItemSet::QA);
  std::vector<CurveRow> display, per_replicate;
  for (const auto& [variant, datasets] : run.datasets) {
    std::vector<double> labels;
    std::vector<int> outcomes;
    for (const WocDataset& ds : datasets) {
      const auto qa = labels_for(ds, run.corpus, ItemSet::QA);
      for (const auto& [id, v] : qa) {
        labels.push_back(v);
        outcomes.push_back(truth.at(id));
      }
      per_replicate.push_back({std::string(to_string(variant)) + "/" +
                                   std::to_string(ds.replicate_index),
                               calibration_curve(qa, truth, cfg.ece_bins)});
    }
    if (labels.empty()) continue;
    const Eigen::Map<const Eigen::ArrayXd> l(labels.data(), static_cast<Eigen::Index>(labels.size()));
    const Eigen::Map<const Eigen::ArrayXi> t(outcomes.data(),
                                             static_cast<Eigen::Index>(outcomes.size()));
    display.push_back({std::string(to_string(variant)), calibration_curve(l, t, cfg.curve_bins)});
  }
  dir.write("curves_" + run.spec.name + ".csv",
            [&](std::ostream& out) { write_curve_csv(out, display); });
  dir.write("ece_curves_" + run.spec.name + ".csv",
            [&](std::ostream& out) { write_curve_csv(out, per_replicate); });
}

void write_individual(RunDirectory& dir, const std::string& name,
                      const std::vector<IndividualSummary>& rows) {
  dir.write(name, [&](std::ostream& out) {
    csv::write_row(out, {"label", "gs_prevalence", "n_annotators", "metric", "mean", "lower",
                         "upper", "sd", "n"});
    for (const auto& s : rows) {
      for (const auto& [metric, ci] : {std::pair{"miss", &s.miss}, std::pair{"fa", &s.fa}}) {
        if (!*ci) continue;
        const auto& c = **ci;
        csv::write_row(out, {s.label, csv::format_double(s.gs_prevalence),
                             std::to_string(s.n_annotators), metric, csv::format_double(c.mean),
                             csv::format_double(c.lower), csv::format_double(c.upper),
                             csv::format_double(c.sd), std::to_string(c.n)});
      }
    }
  });
}

void write_sweep(RunDirectory& dir, const std::string& name,
                 const std::map<Variant, std::vector<SweepPoint>>& sweeps) {
  dir.write(name, [&](std::ostream& out) {
    csv::write_row(out, {"variant", "k", "metric", "mean", "lower", "upper", "sd", "n"});
    for (const auto& [variant, points] : sweeps) {
      for (const SweepPoint& p : points) {
        for (const auto& [metric, s] : p.metrics) {
          csv::write_row(out, {std::string(to_string(variant)), std::to_string(p.k), metric,
                               csv::format_double(s.mean), csv::format_double(s.lower),
                               csv::format_double(s.upper), csv::format_double(s.sd),
                               std::to_string(s.n)});
        }
      }
    }
  });
}

void write_models(RunDirectory& dir, const std::vector<VariantModelSummary>& models) {
  std::vector<MetricRow> rows;
  for (const auto& m : models) {
    const std::string v(to_string(m.key.variant));
    for (const auto& job : m.jobs) {
      rows.push_back({v, m.key.gs_prevalence, std::to_string(job.replicate),
                      job.evaluation.rates.miss_rate, job.evaluation.rates.false_alarm_rate,
                      job.evaluation.ece, std::to_string(job.split)});
    }
    for (const char* label : {"mean", "lower", "upper"}) {
      auto pick = [&](const std::optional<ConfidenceInterval>& ci) -> std::optional<double> {
        if (!ci) return std::nullopt;
        const std::string l = label;
        return l == "mean" ? ci->mean : l == "lower" ? ci->lower : ci->upper;
      };
      rows.push_back({v, m.key.gs_prevalence, label, pick(m.miss), pick(m.fa), pick(m.ece), "all"});
    }
  }
  dir.write("model_metrics.csv",
            [&](std::ostream& out) { write_metric_csv(out, rows, /*with_split=*/true); });

  dir.write("model_weights.csv", [&](std::ostream& out) {
    std::vector<std::string> header{"variant", "gs_prevalence", "split", "replicate", "bias"};
    const Eigen::Index dim =
        models.empty() || models.front().jobs.empty() ? 0 : models.front().jobs.front().model.weights.size();
    for (Eigen::Index d = 0; d < dim; ++d) header.push_back("w" + std::to_string(d));
    csv::write_row(out, header);
    for (const auto& m : models) {
      for (const auto& job : m.jobs) {
        std::vector<std::string> row{std::string(to_string(m.key.variant)),
                                     csv::format_double(m.key.gs_prevalence),
                                     std::to_string(job.split), std::to_string(job.replicate),
                                     csv::format_double(job.model.bias)};
        for (Eigen::Index d = 0; d < job.model.weights.size(); ++d) {
          row.push_back(csv::format_double(job.model.weights(d)));
        }
        csv::write_row(out, row);
      }
    }
  });

  dir.write("hyperparameters.csv", [&](std::ostream& out) {
    csv::write_row(out, {"variant", "gs_prevalence", "epochs", "learning_rate", "l2_strength",
                         "batch_size"});
    for (const auto& m : models) {
      csv::write_row(out, {std::string(to_string(m.key.variant)),
                           csv::format_double(m.key.gs_prevalence), std::to_string(m.config.epochs),
                           csv::format_double(m.config.learning_rate),
                           csv::format_double(m.config.l2_strength),
                           std::to_string(m.config.batch_size)});
    }
  });
}

ordered_json report_json(const ExperimentConfig& cfg, const Results& res) {
  ordered_json j;
  j["config_hash"] = cfg.hash();
  j["conditions"] = ordered_json::array();
  for (const ConditionRun& run : res.runs) {
    ordered_json c;
    c["name"] = run.spec.name;
    c["gs_prevalence"] = run.gs_prevalence();
    c["qa_prevalence"] = run.corpus.qa_prevalence();
    c["individual"] = ordered_json::array();
    if (const auto it = res.individual.find(run.spec.name); it != res.individual.end()) {
      for (const auto& s : it->second) {
        c["individual"].push_back({{"label", s.label},
                                   {"n_annotators", s.n_annotators},
                                   {"miss", ci_json(s.miss)},
                                   {"fa", ci_json(s.fa)}});
      }
    }
    c["crowd"] = ordered_json::array();
    if (const auto it = res.crowd.find(run.spec.name); it != res.crowd.end()) {
      for (const auto& [v, s] : it->second) {
        c["crowd"].push_back({{"variant", to_string(v)},
                              {"n_replicates", s.scores.size()},
                              {"miss", ci_json(s.miss)},
                              {"fa", ci_json(s.fa)},
                              {"ece", ci_json(s.ece)}});
      }
    }
    c["excluded_crowd_replicates"] = run.excluded_crowd_replicates;
    c["sweep"] = ordered_json::array();
    if (const auto it = res.sweeps.find(run.spec.name); it != res.sweeps.end()) {
      for (const auto& [v, points] : it->second) {
        for (const SweepPoint& p : points) {
          ordered_json row{{"variant", to_string(v)}, {"k", p.k}};
          for (const auto& [metric, s] : p.metrics) {
            row[metric] = {{"mean", s.mean}, {"lower", s.lower}, {"upper", s.upper}, {"n", s.n}};
          }
          c["sweep"].push_back(row);
        }
      }
    }
    c["warnings"] = run.warnings;
    j["conditions"].push_back(c);
  }
  j["models"] = ordered_json::array();
  for (const auto& m : res.models) {
    j["models"].push_back({{"variant", to_string(m.key.variant)},
                           {"gs_prevalence", m.key.gs_prevalence},
                           {"epochs", m.config.epochs},
                           {"learning_rate", m.config.learning_rate},
                           {"l2_strength", m.config.l2_strength},
                           {"batch_size", m.config.batch_size},
                           {"n_jobs", m.jobs.size()},
                           {"miss", ci_json(m.miss)},
                           {"fa", ci_json(m.fa)},
                           {"ece", ci_json(m.ece)}});
  }
  return j;
}

std::string report_text(const ExperimentConfig& cfg, const Results& res) {
  std::ostringstream out;
  out << "crowdcal " << CROWDCAL_VERSION << "  config " << cfg.hash().substr(0, 12) << "\n";
  out << "intervals: " << fmt(100.0 * cfg.ci_level, 0) << "% t-intervals across replicates\n";
  for (const ConditionRun& run : res.runs) {
    out << "\n== " << run.spec.name << ": GS prevalence " << fmt(run.gs_prevalence(), 3)
        << ", QA prevalence " << fmt(run.corpus.qa_prevalence(), 3) << "\n";
    if (const auto it = res.individual.find(run.spec.name); it != res.individual.end()) {
      out << "\nIndividual annotators (QA)\n";
      out << std::left << std::setw(10) << "label" << std::setw(30) << "miss" << "false alarm\n";
      for (const auto& s : it->second) {
        out << std::setw(10) << s.label << std::setw(30) << fmt_ci(s.miss) << fmt_ci(s.fa) << "\n";
      }
    }
    if (const auto it = res.crowd.find(run.spec.name); it != res.crowd.end()) {
      out << "\nCrowd labels, k = " << cfg.k << " (QA)\n";
      out << std::left << std::setw(10) << "variant" << std::setw(30) << "miss" << std::setw(30)
          << "false alarm" << "ECE\n";
      for (const auto& [v, s] : it->second) {
        out << std::setw(10) << to_string(v) << std::setw(30) << fmt_ci(s.miss) << std::setw(30)
            << fmt_ci(s.fa) << fmt_ci(s.ece) << "\n";
      }
      if (!run.excluded_crowd_replicates.empty()) {
        out << "rEB_CR excludes " << run.excluded_crowd_replicates.size()
            << " replicates with failed crowd fits\n";
      }
    }
    if (const auto it = res.sweeps.find(run.spec.name); it != res.sweeps.end()) {
      for (const char* metric : {"miss", "fa", "ece"}) {
        out << "\nCrowd size sweep: mean " << metric << "\n" << std::left << std::setw(10) << "k";
        for (const auto& [v, points] : it->second) out << std::setw(10) << to_string(v);
        out << "\n";
        const std::size_t n = it->second.begin()->second.size();
        for (std::size_t i = 0; i < n; ++i) {
          out << std::setw(10) << it->second.begin()->second[i].k;
          for (const auto& [v, points] : it->second) {
            const auto m = points[i].metrics.find(metric);
            out << std::setw(10) << (m == points[i].metrics.end() ? "n/a" : fmt(m->second.mean));
          }
          out << "\n";
        }
      }
    }
  }
  if (!res.models.empty()) {
    out << "\nModels trained on crowd labels (QA, held-out sources)\n";
    out << std::left << std::setw(10) << "variant" << std::setw(8) << "GS" << std::setw(30)
        << "miss" << std::setw(30) << "false alarm" << "ECE\n";
    for (const auto& m : res.models) {
      out << std::setw(10) << to_string(m.key.variant) << std::setw(8)
          << fmt(m.key.gs_prevalence, 2) << std::setw(30) << fmt_ci(m.miss) << std::setw(30)
          << fmt_ci(m.fa) << fmt_ci(m.ece) << "\n";
    }
  }
  std::size_t n_warnings = 0;
  for (const auto& run : res.runs) n_warnings += run.warnings.size();
  if (n_warnings > 0) out << "\n" << n_warnings << " warnings; see report.json\n";
  return out.str();
}

Corpus read_corpus_input(const CommandInputs& inputs) {
  if (!inputs.corpus) throw ConfigError("--corpus is required with external inputs");
  std::ifstream in(*inputs.corpus);
  if (!in) throw ConfigError("cannot read corpus " + inputs.corpus->string());
  return read_corpus_csv(in);
}

JudgmentTable ingest_input(RunDirectory& dir, const CommandInputs& inputs, const Corpus& corpus,
                           const ExperimentConfig& cfg) {
  std::ifstream in(*inputs.judgments);
  if (!in) throw ConfigError("cannot read judgments " + inputs.judgments->string());
  IngestResult result = ingest_judgments(in, corpus);
  if (!result.errors.empty()) {
    dir.write("rejected_rows.csv", [&](std::ostream& out) {
      csv::write_row(out, {"line", "message"});
      for (const auto& e : result.errors) csv::write_row(out, {std::to_string(e.line), e.message});
    });
  }
  return filter_judgments(result.table, cfg.min_trials);
}

ResponseMode single_mode(const JudgmentTable& table) {
  if (table.empty()) throw ContractError("no judgments left after ingestion and filtering");
  const ResponseMode mode = table.judgments().front().mode;
  for (const Judgment& j : table.judgments()) {
    if (j.mode != mode) throw ContractError("judgment file mixes binary and belief responses");
  }
  return mode;
}

void run_external(RunDirectory& dir, const std::string& sub, const ExperimentConfig& cfg,
                  const CommandInputs& inputs) {
  const Corpus corpus = read_corpus_input(inputs);
  if (sub == "evaluate") {
    std::ifstream in(*inputs.woc);
    if (!in) throw ConfigError("cannot read " + inputs.woc->string());
    const std::vector<WocDataset> all = read_woc_csv(in);
    ConditionRun run;
    run.spec.name = "input";
    run.corpus = corpus;
    for (const WocDataset& ds : all) run.datasets[ds.variant].push_back(ds);
    std::vector<MetricRow> rows;
    for (const auto& [v, datasets] : run.datasets) {
      const auto r = metric_rows(summarize_variant(datasets, corpus, cfg));
      rows.insert(rows.end(), r.begin(), r.end());
    }
    dir.write("metrics.csv", [&](std::ostream& out) { write_metric_csv(out, rows); });
    write_curves(dir, cfg, run);
    return;
  }
  const JudgmentTable table = ingest_input(dir, inputs, corpus, cfg);
  const ResponseMode mode = single_mode(table);
  const std::string name = "input";
  if (sub == "aggregate") {
    const Variant v = mode == ResponseMode::Binary ? Variant::BC : Variant::EB;
    const auto ds = generate_replicates(table, corpus, plan_for(cfg, name, v), v, cfg.jobs);
    dir.write("woc.csv", [&](std::ostream& out) { write_woc_csv(out, ds); });
    return;
  }
  // recalibrate
  if (mode != ResponseMode::Belief) throw ContractError("recalibration needs belief judgments");
  IndividualRecalibration rec = recalibrate_individual(table, cfg.clamp, cfg.fit);
  std::vector<FitRecord> fits;
  for (const auto& [id, fit] : rec.fits) fits.push_back({"individual", id, fit});
  auto reb = generate_replicates(rec.table, corpus, plan_for(cfg, name, Variant::rEB_noCR),
                                 Variant::rEB_noCR, cfg.jobs);
  std::vector<std::size_t> excluded;
  auto cr = crowd_recalibrate_all(reb, corpus, cfg, &fits, &excluded);
  reb.insert(reb.end(), cr.begin(), cr.end());
  dir.write("judgments_reb.csv", [&](std::ostream& out) { write_judgments_csv(out, rec.table); });
  dir.write("woc_reb.csv", [&](std::ostream& out) { write_woc_csv(out, reb); });
  dir.write("llo_params.csv", [&](std::ostream& out) { write_fit_csv(out, fits); });
  std::vector<std::string> warnings = rec.warnings;
  for (std::size_t r : excluded) warnings.push_back("crowd fit failed for replicate " + std::to_string(r));
  if (!warnings.empty()) {
    dir.write("warnings.txt", [&](std::ostream& out) {
      for (const auto& w : warnings) out << w << "\n";
    });
  }
}

}  // namespace

RunManifest run_command(const std::string& subcommand, const ExperimentConfig& cfg,
                        const std::filesystem::path& out, const CommandInputs& inputs) {
  if (std::find(std::begin(kSubcommands), std::end(kSubcommands), subcommand) ==
      std::end(kSubcommands)) {
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  }
  cfg.validate();
  const bool external = inputs.judgments || inputs.woc;
  if (inputs.woc && subcommand != "evaluate") throw ConfigError("--woc applies to evaluate only");
  if (inputs.judgments && subcommand != "aggregate" && subcommand != "recalibrate") {
    throw ConfigError("--judgments applies to aggregate and recalibrate only");
  }

  RunDirectory dir(out, subcommand, cfg.hash());
  try {
    dir.write("config.json", [&](std::ostream& o) { o << cfg.to_json().dump(2) << "\n"; });
    if (external) {
      run_external(dir, subcommand, cfg, inputs);
      return dir.finish(true);
    }

    const bool all = subcommand == "reproduce-study2";
    const bool report = all || subcommand == "report";
    const bool need_aggregate = subcommand != "simulate" && subcommand != "sweep";
    const bool need_sweep = report || subcommand == "sweep";
    const bool need_train = report || subcommand == "train";

    Results res;
    for (const ConditionSpec& spec : cfg.conditions) {
      ConditionRun run = simulate_condition(cfg, spec);
      const std::string& n = spec.name;
      if (subcommand == "simulate" || all) {
        dir.write("corpus_" + n + ".csv", [&](std::ostream& o) { write_corpus_csv(o, run.corpus); });
        dir.write("judgments_" + n + "_bc.csv", [&](std::ostream& o) { write_judgments_csv(o, run.bc); });
        dir.write("judgments_" + n + "_eb.csv", [&](std::ostream& o) { write_judgments_csv(o, run.eb); });
        write_leaderboard(dir, "leaderboard_" + n + "_bc.csv", run.bc, ResponseMode::Binary);
        write_leaderboard(dir, "leaderboard_" + n + "_eb.csv", run.eb, ResponseMode::Belief);
      }
      if (need_aggregate) aggregate_condition(cfg, run);
      if (subcommand == "aggregate") {
        write_datasets(dir, "woc_" + n + ".csv", run, {Variant::BC, Variant::EB});
      }
      if (subcommand == "recalibrate" || all) {
        dir.write("judgments_" + n + "_reb.csv", [&](std::ostream& o) { write_judgments_csv(o, run.reb); });
        dir.write("llo_params_" + n + ".csv", [&](std::ostream& o) { write_fit_csv(o, run.fits); });
      }
      if (subcommand == "recalibrate") {
        write_datasets(dir, "woc_" + n + "_reb.csv", run, {Variant::rEB_noCR, Variant::rEB_CR});
      }
      if (all) {
        write_datasets(dir, "woc_" + n + ".csv", run,
                       {Variant::BC, Variant::EB, Variant::rEB_noCR, Variant::rEB_CR});
      }
      if (subcommand == "evaluate" || report) {
        auto& crowd = res.crowd[n];
        std::vector<MetricRow> rows;
        for (const auto& [v, datasets] : run.datasets) {
          crowd[v] = summarize_variant(datasets, run.corpus, cfg);
          const auto r = metric_rows(crowd[v]);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        const double gs = run.gs_prevalence();
        res.individual[n] = {summarize_individuals(run.bc, "BC", gs, cfg.ci_level),
                             summarize_individuals(run.eb, "EB", gs, cfg.ci_level),
                             summarize_individuals(run.reb, "rEB", gs, cfg.ci_level)};
        if (subcommand == "evaluate" || all) {
          dir.write("metrics_" + n + ".csv", [&](std::ostream& o) { write_metric_csv(o, rows); });
          write_individual(dir, "individual_" + n + ".csv", res.individual[n]);
          write_curves(dir, cfg, run);
        }
      }
      if (need_sweep) {
        auto& sweeps = res.sweeps[n];
        for (Variant v : kAllVariants) sweeps[v] = sweep_variant(run, v, cfg);
        if (subcommand == "sweep" || all) write_sweep(dir, "sweep_" + n + ".csv", sweeps);
      }
      res.runs.push_back(std::move(run));
    }

    if (need_train) {
      res.models = run_downstream(cfg, res.runs, kAllVariants);
      if (subcommand == "train" || all) write_models(dir, res.models);
    }

    std::vector<std::string> warnings;
    for (const auto& run : res.runs) warnings.insert(warnings.end(), run.warnings.begin(), run.warnings.end());
    if (!warnings.empty()) {
      dir.write("warnings.txt", [&](std::ostream& o) {
        for (const auto& w : warnings) o << w << "\n";
      });
    }
    if (report) {
      dir.write("report.txt", [&](std::ostream& o) { o << report_text(cfg, res); });
      dir.write("report.json", [&](std::ostream& o) { o << report_json(cfg, res).dump(2) << "\n"; });
    }
    return dir.finish(true);
  } catch (const std::exception& e) {
    dir.finish(false, e.what());
    throw;
  }
}

}  // namespace crowdcal
