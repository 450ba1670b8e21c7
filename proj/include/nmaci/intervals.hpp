#pragma once

// Wald, likelihood-ratio and score statistics for H0: r'mu = r'mu0 and their
// closed-form confidence intervals. All three reduce to
//   W(theta) = (r'mu_hat(theta) - r'mu0)^2 / h(theta)^2
// evaluated at theta_hat (Wald) or theta_tilde (LR, score). The LR and score
// intervals hold theta_tilde and delta at the values fitted under the
// user-specified null; they are not re-solved along the interval.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "nmaci/estimation.hpp"

namespace nmaci {

enum class StatisticKind { wald, lr, score };
enum class Adjustment { none, bartlett, bartlett_bootstrap };

inline std::string_view to_string(StatisticKind kind) {
  switch (kind) {
    case StatisticKind::wald: return "wald";
    case StatisticKind::lr: return "lr";
    case StatisticKind::score: return "score";
  }
  return "unknown";
}

inline std::string_view to_string(Adjustment adj) {
  switch (adj) {
    case Adjustment::none: return "none";
    case Adjustment::bartlett: return "bartlett";
    case Adjustment::bartlett_bootstrap: return "bartlett+bootstrap";
  }
  return "unknown";
}

struct ConfidenceInterval {
  int contrast = 0;
  StatisticKind kind = StatisticKind::wald;
  Adjustment adjustment = Adjustment::none;
  double lower = 0;
  double upper = 0;
  double level = 0.95;
  double center = 0;
  double half_width = 0;
  double factor = 1.0;   // adjustment factor applied to the critical value (1 when naive)
  double h = 0;          // h(theta) used for scaling
  bool boundary = false; // theta at the admissible boundary; expansion unreliable
  std::vector<std::string> warnings;

  bool contains(double value) const { return lower <= value && value <= upper; }
};

/// Upper alpha/2 point of the standard normal; its square is the upper-alpha
/// point of chi-square with one degree of freedom.
inline double z_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_input, "alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), alpha / 2.0));
}

inline double chi2_critical(double alpha) {
  const double z = z_critical(alpha);
  return z * z;
}

/// W(theta) = (r'mu_hat(theta) - r'mu0)^2 / h(theta)^2.
inline double w_statistic(const MarginalModel& model, const Vector& theta, const NullSpec& null) {
  null.validate(model.p());
  const auto st = gls_state(model, theta);
  const double diff = null.r.dot(st.mu_hat) - null.value();
  return diff * diff / h_squared(st, null);
}

inline double wald_statistic(const MarginalModel& model, const FitResult& fit_hat, const NullSpec& null) {
  if (fit_hat.constrained) throw Error(ErrorCode::kind_mismatch, "Wald statistic needs an unconstrained fit");
  return w_statistic(model, fit_hat.theta, null);
}

inline double score_statistic(const MarginalModel& model, const FitResult& fit_tilde, const NullSpec& null) {
  if (!fit_tilde.constrained) throw Error(ErrorCode::kind_mismatch, "score statistic needs a constrained fit");
  return w_statistic(model, fit_tilde.theta, null);
}

/// LR = -2 delta + W(theta_tilde).
inline double lr_statistic(const MarginalModel& model, const FitResult& fit_hat, const FitResult& fit_tilde,
                           const NullSpec& null) {
  if (fit_hat.kind != fit_tilde.kind) throw Error(ErrorCode::kind_mismatch, "LR statistic needs fits of the same kind");
  return -2.0 * delta(model, fit_hat.kind, fit_hat, fit_tilde) + w_statistic(model, fit_tilde.theta, null);
}

inline double statistic(const MarginalModel& model, const NullFits& fits, StatisticKind kind) {
  switch (kind) {
    case StatisticKind::wald: return w_statistic(model, fits.hat.theta, fits.null);
    case StatisticKind::lr: return -2.0 * fits.delta + w_statistic(model, fits.tilde.theta, fits.null);
    case StatisticKind::score: return w_statistic(model, fits.tilde.theta, fits.null);
  }
  return 0.0;
}

namespace detail {

struct IntervalBasis {
  double center = 0;
  double h = 0;
  bool boundary = false;
};

/// r'mu_hat and h at theta_hat (Wald) or theta_tilde (LR, score).
inline IntervalBasis interval_basis(const MarginalModel& model, const NullFits& fits, StatisticKind kind) {
  const FitResult& f = kind == StatisticKind::wald ? fits.hat : fits.tilde;
  const auto st = gls_state(model, f.theta);
  return {fits.null.r.dot(st.mu_hat), std::sqrt(h_squared(st, fits.null)), f.boundary};
}

inline ConfidenceInterval make_interval(const NullFits& fits, StatisticKind kind, Adjustment adj, double alpha,
                                        const IntervalBasis& basis, double half, double factor) {
  ConfidenceInterval ci;
  ci.contrast = fits.null.index();
  ci.kind = kind;
  ci.adjustment = adj;
  ci.level = 1.0 - alpha;
  ci.center = basis.center;
  ci.half_width = half;
  ci.lower = basis.center - half;
  ci.upper = basis.center + half;
  ci.factor = factor;
  ci.h = basis.h;
  ci.boundary = basis.boundary;
  return ci;
}

inline double lr_radius(double inner, double delta, double crit) {
  if (inner < 0.0) {
    std::ostringstream os;
    os << "degenerate LR interval: critical term " << crit << " + 2*delta (delta = " << delta << ") = " << inner
       << " < 0";
    throw Error(ErrorCode::degenerate_interval, os.str());
  }
  return std::sqrt(inner);
}

}  // namespace detail

/// Naive closed-form interval:
///   Wald  r'mu_hat(theta_hat)   +- z h(theta_hat)
///   LR    r'mu_hat(theta_tilde) +- sqrt(z^2 + 2 delta) h(theta_tilde)
///   Score r'mu_hat(theta_tilde) +- z h(theta_tilde)
inline ConfidenceInterval naive_ci(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                   double alpha) {
  // Same arithmetic as the adjusted intervals at factor 1, so those reduce exactly.
  const double crit = chi2_critical(alpha);
  const auto basis = detail::interval_basis(model, fits, kind);
  double half = std::sqrt(crit) * basis.h;
  if (kind == StatisticKind::lr) half = detail::lr_radius(crit + 2.0 * fits.delta, fits.delta, crit) * basis.h;
  return detail::make_interval(fits, kind, Adjustment::none, alpha, basis, half, 1.0);
}

}  // namespace nmaci
