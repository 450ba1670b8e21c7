#pragma once

// GLS estimators and the four profile log-likelihoods (ML/REML, with or
// without the null constraint r'mu = r'mu0).

#include <cmath>
#include <numbers>
#include <optional>

#include "nmaci/model.hpp"

namespace nmaci {

enum class LikelihoodKind { ml, reml };

inline std::string_view to_string(LikelihoodKind kind) {
  return kind == LikelihoodKind::ml ? "ML" : "REML";
}

/// Factorizations of Sigma(theta) and X' Sigma^-1 X at one theta.
struct GlsState {
  Eigen::LLT<Matrix> sigma_llt;
  Matrix sinv_x;  // Sigma^-1 X
  Eigen::LLT<Matrix> a_llt;
  Matrix a_inv;   // (X' Sigma^-1 X)^-1
  Vector mu_hat;
  double logdet_sigma = 0;
  double logdet_a = 0;
};

namespace detail {

inline double llt_logdet(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Returns nullopt when Sigma(theta) or X' Sigma^-1 X fails to factor.
inline std::optional<GlsState> try_gls_state(const MarginalModel& model, const Vector& theta) {
  GlsState st;
  st.sigma_llt.compute(model.sigma_unchecked(theta));
  if (st.sigma_llt.info() != Eigen::Success) return std::nullopt;
  st.sinv_x = st.sigma_llt.solve(model.x());
  const Matrix a = model.x().transpose() * st.sinv_x;
  st.a_llt.compute(a);
  if (st.a_llt.info() != Eigen::Success) return std::nullopt;
  st.a_inv = st.a_llt.solve(Matrix::Identity(a.rows(), a.cols()));
  st.mu_hat = st.a_llt.solve(st.sinv_x.transpose() * model.y());
  st.logdet_sigma = detail::llt_logdet(st.sigma_llt);
  st.logdet_a = detail::llt_logdet(st.a_llt);
  if (!std::isfinite(st.logdet_sigma) || !std::isfinite(st.logdet_a)) return std::nullopt;
  return st;
}

inline GlsState gls_state(const MarginalModel& model, const Vector& theta) {
  model.structure().check_size(theta);
  if (!model.structure().admissible(theta))
    throw Error(ErrorCode::inadmissible_theta, "theta outside the admissible region");
  auto st = try_gls_state(model, theta);
  if (!st)
    throw Error(ErrorCode::not_positive_definite,
                "Sigma(theta) or X' Sigma^-1 X is not positive definite");
  return std::move(*st);
}

/// (X' Sigma^-1 X)^-1 X' Sigma^-1 y.
inline Vector gls_mu_hat(const MarginalModel& model, const Vector& theta) {
  return gls_state(model, theta).mu_hat;
}

inline double h_squared(const GlsState& st, const NullSpec& null) {
  return null.r.dot(st.a_inv * null.r);
}

/// r' (X' Sigma^-1 X)^-1 r, the variance of r' mu_hat(theta).
inline double h_squared(const MarginalModel& model, const Vector& theta, const NullSpec& null) {
  null.validate(model.p());
  return h_squared(gls_state(model, theta), null);
}

inline Vector mu_tilde(const GlsState& st, const NullSpec& null) {
  const Vector u = st.a_inv * null.r;
  const double h2 = null.r.dot(u);
  Vector out = st.mu_hat - ((null.r.dot(st.mu_hat) - null.value()) / h2) * u;
  // Pin the constrained coordinate; the update above leaves rounding residue.
  out[null.index()] = null.value();
  return out;
}

/// Maximiser of the Gaussian likelihood in mu subject to r'mu = r'mu0.
inline Vector mu_tilde(const MarginalModel& model, const Vector& theta, const NullSpec& null) {
  null.validate(model.p());
  return mu_tilde(gls_state(model, theta), null);
}

/// Profile log-likelihood l(mu_hat(theta), theta) or l(mu_tilde(theta), theta).
struct ProfileObjective {
  MarginalModel model;
  LikelihoodKind kind = LikelihoodKind::reml;
  std::optional<NullSpec> constraint;
};

/// Constant of the ML log-likelihood, -(N/2) ln(2 pi).
inline double ml_constant(const MarginalModel& model) {
  return -0.5 * model.n_obs() * std::log(2.0 * std::numbers::pi);
}

/// Constant of the REML log-likelihood, -((N - p)/2) ln(2 pi).
inline double reml_constant(const MarginalModel& model) {
  return -0.5 * (model.n_obs() - model.p()) * std::log(2.0 * std::numbers::pi);
}

struct ObjectiveEvaluation {
  double value = 0;
  Vector gradient;     // empty unless requested
  Matrix information;  // expected information, empty unless requested
};

namespace detail {

inline double profile_value(const ProfileObjective& obj, const GlsState& st, const Vector& mu) {
  const auto& m = obj.model;
  const Vector resid = m.y() - m.x() * mu;
  const double quad = resid.dot(st.sigma_llt.solve(resid));
  if (obj.kind == LikelihoodKind::ml) return ml_constant(m) - 0.5 * st.logdet_sigma - 0.5 * quad;
  return reml_constant(m) - 0.5 * st.logdet_a - 0.5 * st.logdet_sigma - 0.5 * quad;
}

inline Vector profile_mean(const ProfileObjective& obj, const GlsState& st) {
  return obj.constraint ? mu_tilde(st, *obj.constraint) : st.mu_hat;
}

/// Sigma^-1 for ML, P = Sigma^-1 - Sigma^-1 X A^-1 X' Sigma^-1 for REML.
inline Matrix weight_matrix(const MarginalModel& m, LikelihoodKind kind, const GlsState& st) {
  Matrix k = st.sigma_llt.solve(Matrix::Identity(m.n_obs(), m.n_obs()));
  if (kind == LikelihoodKind::reml) k -= st.sinv_x * st.a_inv * st.sinv_x.transpose();
  return k;
}

}  // namespace detail

/// Expected information of theta: (1/2) tr(K S_i K S_j) with K = Sigma^-1 (ML) or P (REML).
inline Matrix expected_information(const MarginalModel& m, LikelihoodKind kind, const GlsState& st) {
  const Matrix k = detail::weight_matrix(m, kind, st);
  const int q = m.q();
  std::vector<Matrix> ks(q);
  for (int i = 0; i < q; ++i) ks[i] = k * m.sigma_derivatives()[i];
  Matrix info(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = i; j < q; ++j)
      info(i, j) = info(j, i) = 0.5 * ks[i].cwiseProduct(ks[j].transpose()).sum();
  return info;
}

/// Value and, optionally, analytic gradient and expected information. Returns
/// nullopt where Sigma(theta) is not positive definite.
inline std::optional<ObjectiveEvaluation> try_evaluate(const ProfileObjective& obj, const Vector& theta,
                                                       bool with_gradient, bool with_information) {
  const auto& m = obj.model;
  auto st = try_gls_state(m, theta);
  if (!st) return std::nullopt;
  ObjectiveEvaluation ev;
  const Vector mu = detail::profile_mean(obj, *st);
  ev.value = detail::profile_value(obj, *st, mu);
  if (!std::isfinite(ev.value)) return std::nullopt;
  if (!with_gradient && !with_information) return ev;

  const Matrix k = detail::weight_matrix(m, obj.kind, *st);
  const Vector w = st->sigma_llt.solve(m.y() - m.x() * mu);
  const int q = m.q();
  std::vector<Matrix> ks(q);
  for (int i = 0; i < q; ++i) ks[i] = k * m.sigma_derivatives()[i];
  if (with_gradient) {
    ev.gradient.resize(q);
    for (int i = 0; i < q; ++i)
      ev.gradient[i] = -0.5 * ks[i].trace() + 0.5 * w.dot(m.sigma_derivatives()[i] * w);
  }
  if (with_information) {
    ev.information.resize(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = i; j < q; ++j)
        ev.information(i, j) = ev.information(j, i) = 0.5 * ks[i].cwiseProduct(ks[j].transpose()).sum();
  }
  return ev;
}

inline ObjectiveEvaluation evaluate(const ProfileObjective& obj, const Vector& theta, bool with_gradient,
                                    bool with_information) {
  obj.model.structure().check_size(theta);
  if (!obj.model.structure().admissible(theta))
    throw Error(ErrorCode::inadmissible_theta, "theta outside the admissible region");
  if (obj.constraint) obj.constraint->validate(obj.model.p());
  auto ev = try_evaluate(obj, theta, with_gradient, with_information);
  if (!ev) throw Error(ErrorCode::not_positive_definite, "Sigma(theta) is not positive definite");
  return std::move(*ev);
}

inline double objective(const ProfileObjective& obj, const Vector& theta) {
  return evaluate(obj, theta, false, false).value;
}

inline Vector objective_gradient(const ProfileObjective& obj, const Vector& theta) {
  return evaluate(obj, theta, true, false).gradient;
}

}  // namespace nmaci
