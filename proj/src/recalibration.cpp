#include "crowdcal/recalibration.hpp"

#include <Eigen/Cholesky>
#include <ostream>

#include "crowdcal/csv.hpp"

namespace crowdcal {

LloObjective::LloObjective(const CalibrationSet& cal, const ClampPolicy& clamp) {
  clamp.validate();
  if (cal.probabilities.size() != cal.outcomes.size()) {
    throw ContractError("calibration probabilities and outcomes differ in length");
  }
  if ((cal.probabilities < 0.0).any() || (cal.probabilities > 1.0).any() ||
      cal.probabilities.isNaN().any()) {
    throw ContractError("calibration probabilities must lie in [0,1]");
  }
  if (((cal.outcomes != 0.0) && (cal.outcomes != 1.0)).any()) {
    throw ContractError("calibration outcomes must be 0 or 1");
  }
  log_odds = cal.probabilities.unaryExpr([&](double p) { return logit(clamp.apply(p)); });
  outcomes = cal.outcomes;
}

double LloObjective::loglik(const LloParams<double>& params) const {
  const Eigen::ArrayXd z = params.alpha * log_odds + params.beta;
  return (outcomes * z - z.unaryExpr([](double v) { return softplus(v); })).sum();
}

Eigen::Vector2d LloObjective::gradient(const LloParams<double>& params) const {
  const Eigen::ArrayXd z = params.alpha * log_odds + params.beta;
  const Eigen::ArrayXd resid = outcomes - z.unaryExpr([](double v) { return logistic(v); });
  return {(resid * log_odds).sum(), resid.sum()};
}

Eigen::Matrix2d LloObjective::hessian(const LloParams<double>& params) const {
  const Eigen::ArrayXd z = params.alpha * log_odds + params.beta;
  const Eigen::ArrayXd f = z.unaryExpr([](double v) { return logistic(v); });
  const Eigen::ArrayXd w = f * (1.0 - f);
  Eigen::Matrix2d h;
  h(0, 0) = -(w * log_odds.square()).sum();
  h(0, 1) = h(1, 0) = -(w * log_odds).sum();
  h(1, 1) = -w.sum();
  return h;
}

namespace {

bool perfectly_separated(const LloObjective& obj) {
  double max_neg = -INFINITY, min_neg = INFINITY, max_pos = -INFINITY, min_pos = INFINITY;
  for (Eigen::Index i = 0; i < obj.log_odds.size(); ++i) {
    const double x = obj.log_odds[i];
    if (obj.outcomes[i] == 1.0) {
      max_pos = std::max(max_pos, x);
      min_pos = std::min(min_pos, x);
    } else {
      max_neg = std::max(max_neg, x);
      min_neg = std::min(min_neg, x);
    }
  }
  return max_neg <= min_pos || max_pos <= min_neg;
}

// Best beta for a fixed alpha (concave in beta).
double fit_beta(const LloObjective& obj, double alpha, double beta, const FitOptions& options) {
  for (int it = 0; it < options.max_iter; ++it) {
    const LloParams<double> p{alpha, beta};
    const double g = obj.gradient(p)[1];
    if (std::abs(g) < options.tol) break;
    const double h = obj.hessian(p)(1, 1);
    double step = h < -1e-300 ? -g / h : g;
    const double base = obj.loglik(p);
    while (step != 0.0 && obj.loglik({alpha, beta + step}) < base) step /= 2.0;
    beta += step;
  }
  return beta;
}

}  // namespace

LloFit fit_llo_mle(const CalibrationSet& cal, const ClampPolicy& clamp, const FitOptions& options) {
  if (cal.size() == 0) throw ContractError("cannot fit LLO on an empty calibration set");
  const LloObjective obj(cal, clamp);
  const double positives = obj.outcomes.sum();
  if (positives == 0.0 || positives == static_cast<double>(obj.outcomes.size())) {
    throw SeparationError("calibration set has a single outcome class; no finite MLE");
  }

  LloFit fit;
  fit.n_pairs = static_cast<std::size_t>(cal.size());
  fit.separated = perfectly_separated(obj);
  LloParams<double> theta{1.0, 0.0};
  double ll = obj.loglik(theta);
  Eigen::Vector2d g = obj.gradient(theta);

  int it = 0;
  for (; it < options.max_iter && g.norm() >= options.tol; ++it) {
    const Eigen::Matrix2d neg_h = -obj.hessian(theta);
    Eigen::Vector2d dir;
    const Eigen::LDLT<Eigen::Matrix2d> ldlt(neg_h);
    const bool newton_ok = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                           ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, neg_h.trace());
    dir = newton_ok ? Eigen::Vector2d(ldlt.solve(g)) : Eigen::Vector2d(g);
    if (!dir.allFinite()) dir = g;

    // Backtracking on the Armijo condition.
    const double slope = g.dot(dir);
    double t = 1.0;
    LloParams<double> next{theta.alpha + dir[0], theta.beta + dir[1]};
    double next_ll = obj.loglik(next);
    // Near the optimum the log-likelihood change drops below rounding noise;
    // a full Newton step that shrinks the gradient is then taken as is.
    const bool flat_but_better = newton_ok &&
                                 next_ll >= ll - 1e-12 * (1.0 + std::abs(ll)) &&
                                 obj.gradient(next).norm() < g.norm();
    while (!flat_but_better && !(next_ll >= ll + 1e-4 * t * slope) && t > 1e-30) {
      t /= 2.0;
      next = {theta.alpha + t * dir[0], theta.beta + t * dir[1]};
      next_ll = obj.loglik(next);
    }
    if (!flat_but_better && !(next_ll >= ll)) break;  // no ascent left at machine precision
    theta = next;
    ll = next_ll;
    g = obj.gradient(theta);
  }

  fit.params = theta;
  fit.raw_alpha = theta.alpha;
  fit.loglik = ll;
  fit.iterations = it;
  fit.gradient_norm = g.norm();
  fit.converged = fit.gradient_norm < options.tol;
  if (!fit.converged && !fit.separated) {
    throw ConvergenceError("LLO fit did not converge in " + std::to_string(it) +
                               " iterations (gradient norm " +
                               std::to_string(fit.gradient_norm) + ")",
                           fit);
  }
  if (theta.alpha <= 0.0) {
    fit.negative_alpha = true;
    fit.params.alpha = kAlphaFloor;
    fit.params.beta = fit_beta(obj, kAlphaFloor, theta.beta, options);
    fit.loglik = obj.loglik(fit.params);
  }
  return fit;
}

IndividualRecalibration recalibrate_individual(const JudgmentTable& table,
                                               const ClampPolicy& clamp,
                                               const FitOptions& options) {
  IndividualRecalibration result;
  std::vector<Judgment> out(table.judgments().begin(), table.judgments().end());
  for (const Judgment& j : out) {
    if (j.mode != ResponseMode::Belief) {
      throw ContractError("individual recalibration needs belief judgments; " + j.annotator_id +
                          " has a binary one");
    }
  }
  for (const auto& [annotator, indices] : table.by_annotator()) {
    std::vector<std::size_t> gs;
    for (std::size_t i : indices) {
      if (out[i].set == ItemSet::GS) gs.push_back(i);
    }
    CalibrationSet cal;
    cal.source = CalibrationSource::IndividualGS;
    cal.probabilities.resize(static_cast<Eigen::Index>(gs.size()));
    cal.outcomes.resize(static_cast<Eigen::Index>(gs.size()));
    for (std::size_t n = 0; n < gs.size(); ++n) {
      cal.probabilities[static_cast<Eigen::Index>(n)] = out[gs[n]].value;
      cal.outcomes[static_cast<Eigen::Index>(n)] = out[gs[n]].true_label;
    }
    LloFit fit;
    try {
      if (gs.empty()) throw SeparationError("no GS judgments");
      fit = fit_llo_mle(cal, clamp, options);
    } catch (const Error& e) {
      result.warnings.push_back(annotator + ": passed through untransformed (" + e.what() + ")");
      continue;
    }
    if (fit.negative_alpha) {
      result.warnings.push_back(annotator + ": passed through untransformed (negative alpha " +
                                std::to_string(fit.raw_alpha) + ")");
      continue;
    }
    for (std::size_t i : indices) out[i].value = llo_transform(out[i].value, fit.params, clamp);
    result.fits.emplace(annotator, fit);
  }
  result.table = JudgmentTable(std::move(out));
  return result;
}

CrowdRecalibration recalibrate_crowd(const WocDataset& dataset, const Corpus& corpus,
                                     const ClampPolicy& clamp, const FitOptions& options) {
  const auto gs = corpus.subset(ItemSet::GS);
  CalibrationSet cal;
  cal.source = CalibrationSource::CrowdGS;
  cal.probabilities.resize(static_cast<Eigen::Index>(gs.size()));
  cal.outcomes.resize(static_cast<Eigen::Index>(gs.size()));
  for (std::size_t n = 0; n < gs.size(); ++n) {
    auto it = dataset.labels.find(gs[n]->id);
    if (it == dataset.labels.end()) {
      throw ContractError("dataset has no WoC label for GS item " + gs[n]->id);
    }
    cal.probabilities[static_cast<Eigen::Index>(n)] = it->second;
    cal.outcomes[static_cast<Eigen::Index>(n)] = gs[n]->true_label;
  }
  CrowdRecalibration result;
  result.fit = fit_llo_mle(cal, clamp, options);
  if (result.fit.negative_alpha) {
    throw ConvergenceError("crowd LLO optimum has negative alpha " +
                               std::to_string(result.fit.raw_alpha) + "; not applied",
                           result.fit);
  }
  result.dataset = dataset;
  result.dataset.variant = Variant::rEB_CR;
  for (auto& [id, label] : result.dataset.labels) {
    label = llo_transform(label, result.fit.params, clamp);
  }
  return result;
}

void write_fit_csv(std::ostream& out, const std::vector<FitRecord>& records) {
  csv::write_row(out, {"scope", "scope_id", "alpha", "beta", "loglik", "n_pairs", "converged"});
  for (const FitRecord& r : records) {
    csv::write_row(out, {r.scope, r.scope_id, csv::format_double(r.fit.params.alpha),
                         csv::format_double(r.fit.params.beta), csv::format_double(r.fit.loglik),
                         std::to_string(r.fit.n_pairs), r.fit.converged ? "1" : "0"});
  }
}

}  // namespace crowdcal
