#pragma once

// Brute-force Monte-Carlo estimates of the bias terms: simulate
// y ~ N(X mu, Sigma(theta)), refit theta_hat, and average
//   a^2            with a  = r'(mu_hat(theta_hat) - mu_hat(theta)) / h(theta)
//   c1^2           with c1 = -sum_i (theta_hat_i - theta_i) d_i / h(theta)^2
//   c              with c  = -(h(theta_hat)^2 - h(theta)^2) / h(theta)^2
// The analytic expansion takes c1 as the mean-zero first-order part, so E[c2]
// at O(1/N) is the mean of the full c.

#include <cmath>
#include <cstdint>

#include "nmaci/bartlett.hpp"
#include "nmaci/parallel.hpp"
#include "nmaci/rng.hpp"

namespace nmaci {

struct OracleEstimate {
  BiasTerms terms;
  double se_a1_sq = 0;
  double se_c1_sq = 0;
  double se_c2 = 0;
  int replications = 0;
  int failures = 0;
};

namespace detail {

inline void mean_se(const std::vector<double>& xs, const std::vector<char>& ok, double& mean, double& se) {
  double s = 0, s2 = 0;
  long n = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (ok[i]) {
      s += xs[i];
      ++n;
    }
  mean = s / n;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (ok[i]) s2 += (xs[i] - mean) * (xs[i] - mean);
  se = std::sqrt(s2 / (n - 1) / n);
}

}  // namespace detail

inline OracleEstimate mc_bias_oracle(const MarginalModel& model, const Vector& theta, LikelihoodKind kind,
                                     const NullSpec& null, int replications, std::uint64_t seed, int width = 1,
                                     const FitConfig& config = {}) {
  if (replications < 10000) throw Error(ErrorCode::invalid_input, "oracle needs at least 1e4 replications");
  null.validate(model.p());
  const auto geo = detail::bias_geometry(model, theta, kind, null, nullptr);
  const auto st = gls_state(model, theta);
  const Matrix chol = st.sigma_llt.matrixL();
  const double h2 = geo.h2;
  const double h = std::sqrt(h2);

  std::vector<double> a2(replications), c1sq(replications), c(replications);
  std::vector<char> ok(replications, 0);
  parallel_for(replications, width, [&](int i) {
    auto rng = stream(seed, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> gauss;
    Vector eps(model.n_obs());
    for (int k = 0; k < eps.size(); ++k) eps[k] = gauss(rng);
    const Vector y = chol * eps;
    const auto sim = model.with_response(y);
    try {
      const auto f = fit(sim, kind, std::nullopt, config);
      if (!f.converged) return;
      const auto at_hat = gls_state(sim, f.theta);
      const Vector mu_true = st.a_llt.solve(st.sinv_x.transpose() * y);
      const double a = null.r.dot(at_hat.mu_hat - mu_true) / h;
      const double c1 = -(f.theta - theta).dot(geo.d) / h2;
      a2[i] = a * a;
      c1sq[i] = c1 * c1;
      c[i] = -(h_squared(at_hat, null) - h2) / h2;
      ok[i] = 1;
    } catch (const Error&) {
    }
  });

  OracleEstimate out;
  out.replications = replications;
  for (char v : ok) out.failures += v ? 0 : 1;
  if (out.failures > replications / 100)
    throw Error(ErrorCode::refit_failure, "oracle refit failures: " + std::to_string(out.failures) + " of " +
                                              std::to_string(replications));
  out.terms.kind = kind;
  out.terms.theta_at = theta;
  detail::mean_se(a2, ok, out.terms.e_a1_sq, out.se_a1_sq);
  detail::mean_se(c1sq, ok, out.terms.e_c1_sq, out.se_c1_sq);
  detail::mean_se(c, ok, out.terms.e_c2, out.se_c2);
  return out;
}

}  // namespace nmaci
