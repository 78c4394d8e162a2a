#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crowdcal/aggregation.hpp"
#include "crowdcal/core.hpp"
#include "crowdcal/error.hpp"

namespace crowdcal {

template <typename Scalar>
Scalar logit(Scalar p) {
  using std::log;
  return log(p / (Scalar(1) - p));
}

template <typename Scalar>
Scalar logistic(Scalar z) {
  using std::exp;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

// log(1 + e^z) without overflow.
template <typename Scalar>
Scalar softplus(Scalar z) {
  using std::exp;
  using std::log1p;
  return z > Scalar(0) ? z + log1p(exp(-z)) : log1p(exp(z));
}

// Linear-in-log-odds map: logit f(p) = alpha * logit(p) + beta.
template <typename Scalar = double>
struct LloParams {
  Scalar alpha{1};
  Scalar beta{0};

  LloParams inverse() const { return {Scalar(1) / alpha, -beta / alpha}; }
};

struct ClampPolicy {
  double epsilon = 1e-3;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ContractError("clamp epsilon must be in (0, 0.5)");
  }
  template <typename Scalar>
  Scalar apply(Scalar p) const {
    return std::clamp(p, Scalar(epsilon), Scalar(1) - Scalar(epsilon));
  }
};

// Result kept strictly inside (0,1) even where the logistic saturates.
template <typename Scalar>
Scalar llo_transform(Scalar p, const LloParams<Scalar>& params, const ClampPolicy& clamp = {}) {
  const Scalar z = params.alpha * logit(clamp.apply(p)) + params.beta;
  const Scalar tiny = std::numeric_limits<Scalar>::min();
  const Scalar below_one = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / Scalar(2);
  return std::clamp(logistic(z), tiny, below_one);
}

template <typename Derived>
Eigen::ArrayXd llo_transform(const Eigen::ArrayBase<Derived>& p, const LloParams<double>& params,
                             const ClampPolicy& clamp = {}) {
  return p.unaryExpr([&](double v) { return llo_transform(v, params, clamp); });
}

enum class CalibrationSource : std::uint8_t { IndividualGS, CrowdGS };

struct CalibrationSet {
  Eigen::ArrayXd probabilities;
  Eigen::ArrayXd outcomes;  // 0 or 1
  CalibrationSource source = CalibrationSource::IndividualGS;

  Eigen::Index size() const { return probabilities.size(); }
};

// Log-likelihood of outcomes under f(p) and its derivatives in (alpha, beta),
// evaluated on the clamped log-odds of the calibration probabilities.
struct LloObjective {
  LloObjective(const CalibrationSet& cal, const ClampPolicy& clamp);

  double loglik(const LloParams<double>& params) const;
  Eigen::Vector2d gradient(const LloParams<double>& params) const;
  Eigen::Matrix2d hessian(const LloParams<double>& params) const;

  Eigen::ArrayXd log_odds;
  Eigen::ArrayXd outcomes;
};

struct FitOptions {
  double tol = 1e-8;  // on the gradient norm of the summed log-likelihood
  int max_iter = 200;
};

struct LloFit {
  LloParams<double> params;
  double loglik = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  // The classes are split on log-odds (ties at the boundary allowed); the MLE runs off to
  // infinity and the returned iterate is where the search stopped (gradient
  // below tol or the iteration cap), with no ConvergenceError.
  bool separated = false;
  // The unconstrained optimum has alpha <= 0. params then holds the best fit
  // on the alpha > 0 side (alpha at alpha_floor) and raw_alpha the optimum.
  bool negative_alpha = false;
  double raw_alpha = 1.0;
  std::size_t n_pairs = 0;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, LloFit last) : Error(what), last_iterate(last) {}
  LloFit last_iterate;
};

inline constexpr double kAlphaFloor = 1e-6;

// Maximum-likelihood fit of (alpha, beta): a one-feature logistic regression
// on logit(p). Damped Newton steps with backtracking; falls back to
// gradient ascent when the Hessian is not negative definite.
LloFit fit_llo_mle(const CalibrationSet& cal, const ClampPolicy& clamp = {},
                   const FitOptions& options = {});

struct IndividualRecalibration {
  JudgmentTable table;                    // rEB judgments
  std::map<AnnotatorId, LloFit> fits;     // annotators that were transformed
  std::vector<std::string> warnings;      // annotators passed through as-is
};

// Fits each annotator on their own GS belief judgments and transforms all of
// their judgments (GS and QA). Annotators whose fit fails are passed through
// untransformed with a warning.
IndividualRecalibration recalibrate_individual(const JudgmentTable& table,
                                               const ClampPolicy& clamp = {},
                                               const FitOptions& options = {});

struct CrowdRecalibration {
  WocDataset dataset;
  LloFit fit;
};

// Fits on this replicate's GS WoC labels against GS truth, transforms both
// GS and QA labels, and tags the result rEB_CR.
CrowdRecalibration recalibrate_crowd(const WocDataset& dataset, const Corpus& corpus,
                                     const ClampPolicy& clamp = {},
                                     const FitOptions& options = {});

struct FitRecord {
  std::string scope;  // "individual" or "crowd"
  std::string scope_id;
  LloFit fit;
};

void write_fit_csv(std::ostream& out, const std::vector<FitRecord>& records);

}  // namespace crowdcal
