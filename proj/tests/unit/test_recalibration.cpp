#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "crowdcal/error.hpp"
#include "crowdcal/metrics.hpp"
#include "crowdcal/recalibration.hpp"

using namespace crowdcal;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Pairs whose outcomes follow the LLO map of the beliefs.
CalibrationSet synthetic(std::size_t n, double alpha, double beta, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  CalibrationSet cal;
  cal.probabilities.resize(static_cast<Eigen::Index>(n));
  cal.outcomes.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < cal.size(); ++i) {
    const double p = u(gen);
    const double q = sigmoid(alpha * std::log(p / (1 - p)) + beta);
    cal.probabilities[i] = p;
    cal.outcomes[i] = std::bernoulli_distribution(q)(gen) ? 1.0 : 0.0;
  }
  return cal;
}

Judgment belief(const std::string& who, const Item& item, double value, std::uint64_t trial) {
  Judgment j;
  j.annotator_id = who;
  j.item_id = item.id;
  j.mode = ResponseMode::Belief;
  j.value = value;
  j.trial_index = trial;
  j.set = item.set;
  j.true_label = item.true_label;
  j.feedback_shown = item.set == ItemSet::GS;
  j.condition = {0.5, ResponseMode::Belief};
  return j;
}

// Calibrated probabilities for a balanced set: p | y=1 ~ Beta(2,1) and
// p | y=0 ~ Beta(1,2) give P(y=1 | p) = p.
double calibrated_draw(int y, std::mt19937_64& gen) {
  const double r = std::sqrt(std::uniform_real_distribution<double>(0.0, 1.0)(gen));
  return y ? r : 1.0 - r;
}

}  // namespace

TEST_CASE("llo_transform: spec fixtures") {
  CHECK(llo_transform(0.37, LloParams<double>{1.0, 0.0}) == doctest::Approx(0.37).epsilon(1e-12));
  for (double a : {0.1, 0.5, 1.0, 3.0, 40.0}) {
    CHECK(llo_transform(0.5, LloParams<double>{a, 0.0}) == doctest::Approx(0.5).epsilon(1e-15));
  }
  const double beta_one = sigmoid(1.0);
  CHECK(beta_one == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(llo_transform(0.5, LloParams<double>{1.0, 1.0}) == doctest::Approx(beta_one).epsilon(1e-12));
  const double z = 2.0 * std::log(0.73 / 0.27);
  CHECK(z == doctest::Approx(1.9892).epsilon(1e-4));
  CHECK(sigmoid(z) == doctest::Approx(0.8797).epsilon(1e-4));
  CHECK(llo_transform(0.73, LloParams<double>{2.0, 0.0}) == doctest::Approx(sigmoid(z)).epsilon(1e-12));
}

TEST_CASE("llo_transform: boundary beliefs are clamped, output stays inside (0,1)") {
  const ClampPolicy clamp{1e-3};
  const LloParams<double> id{1.0, 0.0};
  CHECK(llo_transform(0.0, id, clamp) == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(llo_transform(1.0, id, clamp) == doctest::Approx(1 - 1e-3).epsilon(1e-9));
  const LloParams<double> steep{500.0, 0.0};
  CHECK(llo_transform(0.0, steep, clamp) > 0.0);
  CHECK(llo_transform(1.0, steep, clamp) < 1.0);
  CHECK_THROWS_AS((ClampPolicy{0.5}).validate(), ContractError);
  CHECK_THROWS_AS((ClampPolicy{0.0}).validate(), ContractError);
}

TEST_CASE("llo_transform: Eigen overload matches the scalar form") {
  Eigen::ArrayXd p(4);
  p << 0.0, 0.2, 0.7, 1.0;
  const LloParams<double> params{1.7, -0.4};
  const Eigen::ArrayXd out = llo_transform(p, params);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(out[i] == llo_transform(p[i], params));
}

TEST_CASE("property: order preservation, fixed point and round trip") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.01, 0.99), la(-1.0, 1.0), lb(-2.0, 2.0);
  const ClampPolicy clamp;
  for (int i = 0; i < 2000; ++i) {
    const LloParams<double> params{std::exp(la(gen)), lb(gen)};
    double p1 = u(gen), p2 = u(gen);
    if (p1 > p2) std::swap(p1, p2);
    if (p1 < p2) CHECK(llo_transform(p1, params, clamp) < llo_transform(p2, params, clamp));
    CHECK(llo_transform(0.5, LloParams<double>{params.alpha, 0.0}, clamp) ==
          doctest::Approx(0.5).epsilon(1e-15));
    // the inverse is applied without a clamp of its own
    const double f = llo_transform(p1, params, clamp);
    const double back = sigmoid(params.inverse().alpha * std::log(f / (1 - f)) + params.inverse().beta);
    CHECK(std::abs(back - p1) < 1e-10);
  }
  // and with the default clamp, whenever the forward value is itself unclamped
  const LloParams<double> mild{1.3, 0.2};
  for (double p = 0.01; p < 0.99; p += 0.01) {
    CHECK(std::abs(llo_transform(llo_transform(p, mild), mild.inverse()) - p) < 1e-10);
  }
}

TEST_CASE("property: analytic gradient and Hessian match finite differences") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> la(-1.5, 1.5), lb(-2.0, 2.0);
  for (int triple = 0; triple < 20; ++triple) {
    const CalibrationSet cal = synthetic(50 + 10 * triple, std::exp(la(gen)), lb(gen), gen());
    const LloObjective obj(cal, ClampPolicy{});
    const LloParams<double> at{std::exp(la(gen)), lb(gen)};
    const Eigen::Vector2d g = obj.gradient(at);
    const Eigen::Matrix2d h = obj.hessian(at);
    const double step = 1e-5;
    Eigen::Vector2d fd;
    fd[0] = (obj.loglik({at.alpha + step, at.beta}) - obj.loglik({at.alpha - step, at.beta})) / (2 * step);
    fd[1] = (obj.loglik({at.alpha, at.beta + step}) - obj.loglik({at.alpha, at.beta - step})) / (2 * step);
    CHECK((g - fd).norm() / std::max(1.0, g.norm()) < 1e-6);
    Eigen::Matrix2d fdh;
    fdh.col(0) = (obj.gradient({at.alpha + step, at.beta}) - obj.gradient({at.alpha - step, at.beta})) / (2 * step);
    fdh.col(1) = (obj.gradient({at.alpha, at.beta + step}) - obj.gradient({at.alpha, at.beta - step})) / (2 * step);
    CHECK((h - fdh).norm() / std::max(1.0, h.norm()) < 1e-6);
  }
}

TEST_CASE("fit_llo_mle: recovers known parameters") {
  for (auto [a, b] : {std::pair{2.0, 0.5}, std::pair{0.5, -1.0}, std::pair{1.0, 0.0}}) {
    const LloFit fit = fit_llo_mle(synthetic(5000, a, b, 99));
    CHECK(fit.converged);
    CHECK_FALSE(fit.separated);
    CHECK(fit.n_pairs == 5000);
    CHECK(std::abs(fit.params.alpha - a) <= 0.1 * a);
    CHECK(std::abs(fit.params.beta - b) <= 0.1);
  }
}

TEST_CASE("fit_llo_mle: single-class set is a separation error") {
  CalibrationSet cal;
  cal.probabilities = Eigen::ArrayXd::LinSpaced(10, 0.1, 0.9);
  cal.outcomes = Eigen::ArrayXd::Ones(10);
  CHECK_THROWS_AS(fit_llo_mle(cal), SeparationError);
  cal.outcomes.setZero();
  CHECK_THROWS_AS(fit_llo_mle(cal), SeparationError);
  CHECK_THROWS_AS(fit_llo_mle(CalibrationSet{}), ContractError);
}

TEST_CASE("property: fit optimality") {
  const FitOptions options{1e-6, 200};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CalibrationSet cal = synthetic(200, 1.4, -0.3, seed);
    const LloFit fit = fit_llo_mle(cal, ClampPolicy{}, options);
    REQUIRE(fit.converged);
    const LloObjective obj(cal, ClampPolicy{});
    const Eigen::Vector2d g = obj.gradient(fit.params);
    CHECK(std::abs(g[0]) < options.tol);
    CHECK(std::abs(g[1]) < options.tol);
    const double ll = obj.loglik(fit.params);
    const double d = 10 * options.tol;
    for (auto [da, db] : {std::pair{d, 0.0}, std::pair{-d, 0.0}, std::pair{0.0, d}, std::pair{0.0, -d}}) {
      CHECK(obj.loglik({fit.params.alpha + da, fit.params.beta + db}) <= ll);
    }
  }
}

TEST_CASE("fit_llo_mle: separated data is flagged, not an error") {
  CalibrationSet cal;
  cal.probabilities.resize(6);
  cal.probabilities << 0.1, 0.2, 0.3, 0.6, 0.7, 0.9;
  cal.outcomes.resize(6);
  cal.outcomes << 0, 0, 0, 1, 1, 1;
  const LloFit fit = fit_llo_mle(cal);
  CHECK(fit.separated);
  CHECK(fit.params.alpha > 5.0);
  CHECK(llo_transform(0.8, fit.params) > 0.99);
}

TEST_CASE("fit_llo_mle: anti-calibrated data reports negative alpha") {
  const CalibrationSet cal = synthetic(2000, -1.0, 0.0, 5);
  const LloFit fit = fit_llo_mle(cal);
  CHECK(fit.negative_alpha);
  CHECK(fit.raw_alpha < 0.0);
  CHECK(fit.params.alpha == kAlphaFloor);
}

TEST_CASE("recalibrate_individual: calibrated, biased and unfittable annotators") {
  std::vector<Item> items;
  for (int i = 0; i < 1500; ++i) {
    items.push_back({"g" + std::to_string(i), i % 2, ItemSet::GS, "g" + std::to_string(i)});
  }
  for (int i = 0; i < 40; ++i) {
    items.push_back({"q" + std::to_string(i), i % 2, ItemSet::QA, "q" + std::to_string(i)});
  }
  const Corpus corpus(items);
  std::mt19937_64 gen(6);
  std::vector<Judgment> js;
  std::uint64_t t = 0;
  for (const Item& it : corpus.items()) {
    const double p = calibrated_draw(it.true_label, gen);
    js.push_back(belief("calibrated", it, p, t));
    // reports beliefs through an LLO with beta* = -1
    js.push_back(belief("low", it, llo_transform(p, LloParams<double>{1.0, -1.0}), t));
    if (it.set == ItemSet::QA || it.true_label == 1) js.push_back(belief("onesided", it, p, t));
    ++t;
  }
  const JudgmentTable table(js);
  const IndividualRecalibration rec = recalibrate_individual(table);

  REQUIRE(rec.fits.count("calibrated") == 1);
  const LloFit& cal = rec.fits.at("calibrated");
  CHECK(std::abs(cal.params.alpha - 1.0) < 0.1);
  CHECK(std::abs(cal.params.beta) < 0.1);

  REQUIRE(rec.fits.count("low") == 1);
  CHECK(rec.fits.at("low").params.beta > 0.5);

  CHECK(rec.fits.count("onesided") == 0);
  REQUIRE(rec.warnings.size() == 1);
  CHECK(rec.warnings[0].find("onesided") != std::string::npos);

  double shift_low = 0, drift_cal = 0;
  std::size_t n_qa = 0;
  const auto before = table.judgments();
  const auto after = rec.table.judgments();
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].set != ItemSet::QA) continue;
    if (before[i].annotator_id == "low") {
      shift_low += after[i].value - before[i].value;
      ++n_qa;
    }
    if (before[i].annotator_id == "calibrated") drift_cal += std::abs(after[i].value - before[i].value);
    if (before[i].annotator_id == "onesided") CHECK(after[i].value == before[i].value);
  }
  CHECK(shift_low / n_qa > 0.05);
  CHECK(drift_cal / n_qa < 0.03);
}

TEST_CASE("recalibrate_individual: binary judgments are rejected") {
  const Corpus c = build_corpus({1, 1, 1, 1, 0, 0});
  Judgment j = belief("a", c.at("gs-p0000"), 1.0, 0);
  j.mode = ResponseMode::Binary;
  CHECK_THROWS_AS(recalibrate_individual(JudgmentTable({j})), ContractError);
}

namespace {

Corpus balanced_corpus(std::size_t n) { return build_corpus({n, n, n, n, 0, 0}); }

}  // namespace

TEST_CASE("recalibrate_crowd: GS labels equal to truth sharpen QA labels") {
  const Corpus c = balanced_corpus(50);
  WocDataset ds;
  ds.replicate_index = 7;
  ds.variant = Variant::rEB_noCR;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (const Item& it : c.items()) {
    ds.labels[it.id] = it.set == ItemSet::GS ? it.true_label : u(gen);
  }
  const CrowdRecalibration cr = recalibrate_crowd(ds, c);
  CHECK(cr.fit.separated);
  CHECK(cr.fit.params.alpha > 2.0);
  for (const Item* it : c.subset(ItemSet::GS)) {
    CHECK(std::abs(cr.dataset.labels.at(it->id) - it->true_label) < 1e-6);
  }
  CHECK(cr.dataset.variant == Variant::rEB_CR);
  CHECK(cr.dataset.replicate_index == 7);
  for (const Item* it : c.subset(ItemSet::QA)) {
    const double before = ds.labels.at(it->id), after = cr.dataset.labels.at(it->id);
    CHECK(std::abs(after - 0.5) >= std::abs(before - 0.5));
  }
}

TEST_CASE("recalibrate_crowd: calibrated GS labels leave QA labels nearly unchanged") {
  const Corpus c = balanced_corpus(2000);
  std::mt19937_64 gen(4);
  WocDataset ds;
  for (const Item& it : c.items()) ds.labels[it.id] = calibrated_draw(it.true_label, gen);
  const CrowdRecalibration cr = recalibrate_crowd(ds, c);
  CHECK(std::abs(cr.fit.params.alpha - 1.0) < 0.1);
  CHECK(std::abs(cr.fit.params.beta) < 0.1);
  double drift = 0;
  for (const Item* it : c.subset(ItemSet::QA)) {
    drift += std::abs(cr.dataset.labels.at(it->id) - ds.labels.at(it->id));
  }
  CHECK(drift / c.count(ItemSet::QA) < 0.03);
}

TEST_CASE("recalibrate_crowd: underestimated positives shift up and misses fall") {
  const Corpus c = balanced_corpus(500);
  std::mt19937_64 gen(5);
  WocDataset ds;
  for (const Item& it : c.items()) {
    ds.labels[it.id] = llo_transform(calibrated_draw(it.true_label, gen), LloParams<double>{1.0, -1.2});
  }
  const CrowdRecalibration cr = recalibrate_crowd(ds, c);
  CHECK(cr.fit.params.beta > 0.5);
  auto miss = [&](const WocDataset& d) {
    std::map<ItemId, int> hard;
    for (const auto& [id, v] : labels_for(d, c, ItemSet::QA)) hard[id] = classify(v);
    return *error_rates(hard, truth_for(c, ItemSet::QA)).miss_rate;
  };
  for (const Item* it : c.subset(ItemSet::QA)) {
    CHECK(cr.dataset.labels.at(it->id) > ds.labels.at(it->id));
  }
  CHECK(miss(cr.dataset) < miss(ds));
}

TEST_CASE("recalibrate_crowd: single-class GS truth propagates a separation error") {
  const Corpus c = build_corpus({2, 2, 3, 0, 0, 0});
  WocDataset ds;
  for (const Item& it : c.items()) ds.labels[it.id] = 0.4;
  CHECK_THROWS_AS(recalibrate_crowd(ds, c), SeparationError);
  ds.labels.erase("gs-p0001");
  CHECK_THROWS_AS(recalibrate_crowd(ds, c), ContractError);
}

TEST_CASE("fit CSV layout") {
  LloFit fit;
  fit.params = {2.0, -0.5};
  fit.loglik = -10.25;
  fit.n_pairs = 40;
  fit.converged = true;
  std::stringstream ss;
  write_fit_csv(ss, {{"crowd", "3", fit}});
  CHECK(ss.str() == "scope,scope_id,alpha,beta,loglik,n_pairs,converged\ncrowd,3,2,-0.5,-10.25,40,1\n");
}
