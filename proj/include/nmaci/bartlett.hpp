#pragma once

// Second-order bias terms of the Wald statistic decomposition
//   W(theta_hat) = (a + b)^2 / (1 - c),
//   a = r'(mu_hat(theta_hat) - mu_hat(theta)) / h(theta),
//   c = -(h(theta_hat)^2 - h(theta)^2) / h(theta)^2,
// and the Bartlett-type factors built from them.
//
// With S_i = dSigma/dtheta_i, A = X' Sigma^-1 X, u = A^-1 r, v = Sigma^-1 X u,
// P = Sigma^-1 - Sigma^-1 X A^-1 X' Sigma^-1 and V the inverse expected
// information of theta_hat:
//   d_i      = v' S_i v                        (dh^2/dtheta_i)
//   d_ij     = -2 v' S_i P S_j v               (all structures are linear in theta)
//   E[a1^2]  = tr(V M) / h^2,  M_ij = v' S_i P S_j v
//   E[c1^2]  = d' V d / h^4
//   E[c2]    = -(d' b + tr(V D) / 2) / h^2
// where b is the O(1/N) bias of theta_hat: b = -V g / 2 with
// g_i = tr(A^-1 X' Sigma^-1 S_i Sigma^-1 X) for ML, and zero for REML.

#include <cmath>
#include <string>
#include <vector>

#include "nmaci/intervals.hpp"

namespace nmaci {

struct BiasTerms {
  double e_a1_sq = 0;
  double e_c1_sq = 0;
  double e_c2 = 0;
  LikelihoodKind kind = LikelihoodKind::reml;
  Vector theta_at;
  bool boundary = false;
  std::vector<std::string> warnings;
};

struct AdjustmentFactors {
  double w_ad = 1;
  double lr_ad = 1;
  double s_ad = 1;
  double x = 0;
  std::vector<std::string> warnings;
};

/// Which fitted theta the LR factor is evaluated at.
enum class LrPlugIn { theta_tilde, theta_hat };

struct BartlettOptions {
  LrPlugIn lr_plug_in = LrPlugIn::theta_tilde;
};

namespace detail {

/// Building blocks shared by the analytic terms and the Monte-Carlo oracle.
struct BiasGeometry {
  double h2 = 0;
  Vector d;        // dh^2/dtheta
  Matrix m;        // v' S_i P S_j v
  Matrix v_theta;  // inverse expected information
  Vector bias;     // O(1/N) bias of theta_hat
};

inline BiasGeometry bias_geometry(const MarginalModel& model, const Vector& theta, LikelihoodKind kind,
                                  const NullSpec& null, std::vector<std::string>* warnings) {
  null.validate(model.p());
  const auto st = gls_state(model, theta);
  const int q = model.q();
  const auto& sd = model.sigma_derivatives();

  BiasGeometry g;
  const Vector u = st.a_inv * null.r;
  g.h2 = null.r.dot(u);
  const Vector v = st.sinv_x * u;
  const Matrix sigma_inv = st.sigma_llt.solve(Matrix::Identity(model.n_obs(), model.n_obs()));
  const Matrix p = sigma_inv - st.sinv_x * st.a_inv * st.sinv_x.transpose();

  std::vector<Vector> sv(q);
  g.d.resize(q);
  for (int i = 0; i < q; ++i) {
    sv[i] = sd[i] * v;
    g.d[i] = v.dot(sv[i]);
  }
  g.m.resize(q, q);
  for (int i = 0; i < q; ++i) {
    const Vector psv = p * sv[i];
    for (int j = i; j < q; ++j) g.m(i, j) = g.m(j, i) = sv[j].dot(psv);
  }

  const Matrix info = expected_information(model, kind, st);
  Eigen::LDLT<Matrix> ldlt(info);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    if (warnings) warnings->push_back("expected information is numerically singular");
  }
  g.v_theta = ldlt.solve(Matrix::Identity(q, q));

  g.bias = Vector::Zero(q);
  if (kind == LikelihoodKind::ml) {
    Vector tr(q);
    for (int i = 0; i < q; ++i) tr[i] = (st.a_inv * (st.sinv_x.transpose() * sd[i] * st.sinv_x)).trace();
    g.bias = -0.5 * g.v_theta * tr;
  }
  return g;
}

}  // namespace detail

/// Analytic E[a1^2], E[c1^2], E[c2] evaluated at theta.
inline BiasTerms bias_terms(const MarginalModel& model, const Vector& theta, LikelihoodKind kind,
                            const NullSpec& null) {
  BiasTerms out;
  out.kind = kind;
  out.theta_at = theta;
  out.boundary = detail::at_boundary(model.structure(), theta);
  if (out.boundary) out.warnings.push_back("expansion unreliable at boundary");
  const auto g = detail::bias_geometry(model, theta, kind, null, &out.warnings);
  const Matrix d2 = -2.0 * g.m;
  out.e_a1_sq = (g.v_theta * g.m).trace() / g.h2;
  out.e_c1_sq = g.d.dot(g.v_theta * g.d) / (g.h2 * g.h2);
  out.e_c2 = -(g.d.dot(g.bias) + 0.5 * (g.v_theta * d2).trace()) / g.h2;
  if (!std::isfinite(out.e_a1_sq) || !std::isfinite(out.e_c1_sq) || !std::isfinite(out.e_c2))
    throw Error(ErrorCode::not_positive_definite, "non-finite bias term");
  return out;
}

/// w_ad(x) = 1 + E[a1^2] + E[c2] + (1 + x) E[c1^2] / 4
/// lr_ad   = 1 + E[c2] + E[c1^2] / 4
/// s_ad(x) = 1 - E[a1^2] + E[c2] + (1 - x) E[c1^2] / 4
/// Non-positive factors are clamped to 1e-6 with a warning.
inline AdjustmentFactors adjustment_factors(const BiasTerms& bias, double x) {
  if (!std::isfinite(bias.e_a1_sq) || !std::isfinite(bias.e_c1_sq) || !std::isfinite(bias.e_c2))
    throw Error(ErrorCode::invalid_input, "bias terms must be finite");
  AdjustmentFactors f;
  f.x = x;
  f.w_ad = 1.0 + bias.e_a1_sq + bias.e_c2 + 0.25 * (1.0 + x) * bias.e_c1_sq;
  f.lr_ad = 1.0 + bias.e_c2 + 0.25 * bias.e_c1_sq;
  f.s_ad = 1.0 - bias.e_a1_sq + bias.e_c2 + 0.25 * (1.0 - x) * bias.e_c1_sq;
  auto clamp = [&](double& v, const char* name) {
    if (!(v > 0.0)) {
      f.warnings.push_back(std::string("WARNING: ") + name + " = " + std::to_string(v) +
                           " is not positive; clamped to 1e-6");
      v = 1e-6;
    }
  };
  clamp(f.w_ad, "w_ad");
  clamp(f.lr_ad, "lr_ad");
  clamp(f.s_ad, "s_ad");
  return f;
}

inline double factor_for(const AdjustmentFactors& f, StatisticKind kind) {
  switch (kind) {
    case StatisticKind::wald: return f.w_ad;
    case StatisticKind::lr: return f.lr_ad;
    case StatisticKind::score: return f.s_ad;
  }
  return 1.0;
}

/// Bias terms at the theta the given statistic is plugged in at.
inline BiasTerms bias_terms_for(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                const BartlettOptions& opts = {}) {
  const bool use_hat = kind == StatisticKind::wald ||
                       (kind == StatisticKind::lr && opts.lr_plug_in == LrPlugIn::theta_hat);
  const FitResult& f = use_hat ? fits.hat : fits.tilde;
  return bias_terms(model, f.theta, f.kind, fits.null);
}

/// Adjustment factor applied to the chi-square critical point for `kind`.
inline AdjustmentFactors factors_for(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                     double alpha, const BartlettOptions& opts = {}) {
  auto bias = bias_terms_for(model, fits, kind, opts);
  auto f = adjustment_factors(bias, chi2_critical(alpha));
  f.warnings.insert(f.warnings.begin(), bias.warnings.begin(), bias.warnings.end());
  return f;
}

/// Statistic divided by its Bartlett-type factor.
inline double bartlett_statistic(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                 double alpha, const BartlettOptions& opts = {}) {
  return statistic(model, fits, kind) / factor_for(factors_for(model, fits, kind, alpha, opts), kind);
}

namespace detail {

inline ConfidenceInterval scaled_interval(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                          double alpha, Adjustment adj, double crit, double factor) {
  const auto basis = interval_basis(model, fits, kind);
  double half;
  if (kind == StatisticKind::lr)
    half = lr_radius(crit * factor + 2.0 * fits.delta, fits.delta, crit * factor) * basis.h;
  else
    half = std::sqrt(crit * factor) * basis.h;
  return make_interval(fits, kind, adj, alpha, basis, half, factor);
}

}  // namespace detail

/// Bartlett-type adjusted interval:
///   Wald  r'mu_hat(theta_hat)   +- z h(theta_hat) sqrt(w_ad(z^2))
///   LR    r'mu_hat(theta_tilde) +- sqrt(z^2 lr_ad + 2 delta) h(theta_tilde)
///   Score r'mu_hat(theta_tilde) +- z h(theta_tilde) sqrt(s_ad(z^2))
inline ConfidenceInterval adjusted_ci(const MarginalModel& model, const NullFits& fits, StatisticKind kind,
                                      double alpha, const BartlettOptions& opts = {}) {
  const auto f = factors_for(model, fits, kind, alpha, opts);
  auto ci = detail::scaled_interval(model, fits, kind, alpha, Adjustment::bartlett, chi2_critical(alpha),
                                    factor_for(f, kind));
  ci.warnings = f.warnings;
  return ci;
}

}  // namespace nmaci
