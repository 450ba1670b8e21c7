#pragma once

// Parametric-bootstrap calibration of the Bartlett-adjusted statistics.
// Step 1: y* = X mu_gen + eps*, eps* ~ N(0, Sigma(theta_gen)), by default
//         mu_gen = mu_tilde(theta_hat), theta_gen = theta_hat.
// Step 2: refit theta_hat*, theta_tilde* under the same null and compute the
//         adjusted statistics T*/factor*.
// Step 3: take the ceil((1 - alpha)(m + 1))-th smallest value as z*.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "nmaci/bartlett.hpp"
#include "nmaci/parallel.hpp"
#include "nmaci/rng.hpp"

namespace nmaci {

enum class BootstrapSource {
  null_mean_at_theta_hat,    // (mu_tilde(theta_hat), theta_hat)
  null_mean_at_theta_tilde,  // (mu_tilde(theta_tilde), theta_tilde)
};

struct BootstrapConfig {
  int m = 1001;
  std::uint64_t seed = 20240601;
  double alpha = 0.05;
  int width = 1;
  BootstrapSource source = BootstrapSource::null_mean_at_theta_hat;
  double max_failure_rate = 0.02;
  FitConfig fit;
  BartlettOptions bartlett;
};

struct BootstrapQuantiles {
  double z_star_w = std::numeric_limits<double>::quiet_NaN();
  double z_star_lr = std::numeric_limits<double>::quiet_NaN();
  double z_star_s = std::numeric_limits<double>::quiet_NaN();
  int sets = 0;
  int failures = 0;

  double for_kind(StatisticKind kind) const {
    switch (kind) {
      case StatisticKind::wald: return z_star_w;
      case StatisticKind::lr: return z_star_lr;
      case StatisticKind::score: return z_star_s;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

/// 1-based rank ceil((1 - alpha)(m + 1)) of the upper-alpha order statistic.
inline int order_statistic_index(int m, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_input, "alpha must lie in (0, 1)");
  const double pos = (1.0 - alpha) * (m + 1.0);
  const int k = static_cast<int>(std::ceil(pos - 1e-9));
  if (k < 1 || k > m)
    throw Error(ErrorCode::quantile_out_of_range, "m = " + std::to_string(m) + " is too small for alpha = " +
                                                      std::to_string(alpha));
  return k;
}

/// Upper-alpha order statistic of `values` (sorted in place).
inline double upper_order_statistic(std::vector<double>& values, double alpha) {
  std::sort(values.begin(), values.end());
  return values[order_statistic_index(static_cast<int>(values.size()), alpha) - 1];
}

/// Runs `draw(set, rng)` for m independent sets; each returns one value per
/// slot or nullopt on failure. Slots are sorted independently.
template <std::size_t K, class Draw>
std::array<double, K> bootstrap_order_statistics(int m, double alpha, std::uint64_t seed, int width,
                                                 double max_failure_rate, Draw&& draw, int* failures = nullptr) {
  if (m < 1) throw Error(ErrorCode::invalid_input, "bootstrap needs m >= 1");
  std::vector<std::optional<std::array<double, K>>> results(m);
  parallel_for(m, width, [&](int b) {
    auto rng = stream(seed, static_cast<std::uint64_t>(b), 0xb007);
    results[b] = draw(b, rng);
  });
  int failed = 0;
  for (const auto& r : results) failed += r ? 0 : 1;
  if (failures) *failures = failed;
  if (failed > max_failure_rate * m)
    throw Error(ErrorCode::refit_failure, "bootstrap refit failures: " + std::to_string(failed) + " of " +
                                              std::to_string(m) + " sets");
  std::array<double, K> out;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> vals;
    vals.reserve(m);
    for (const auto& r : results)
      if (r) vals.push_back((*r)[k]);
    out[k] = upper_order_statistic(vals, alpha);
  }
  return out;
}

inline BootstrapQuantiles bootstrap_quantiles(const MarginalModel& model, const NullFits& fits,
                                              const std::vector<StatisticKind>& kinds,
                                              const BootstrapConfig& config) {
  if (config.m < 99) throw Error(ErrorCode::invalid_input, "bootstrap needs m >= 99");
  order_statistic_index(config.m, config.alpha);
  const auto kind = fits.hat.kind;
  const bool need_hat = std::count(kinds.begin(), kinds.end(), StatisticKind::wald) ||
                        std::count(kinds.begin(), kinds.end(), StatisticKind::lr);
  const bool need_tilde = std::count(kinds.begin(), kinds.end(), StatisticKind::lr) ||
                          std::count(kinds.begin(), kinds.end(), StatisticKind::score);

  const Vector& theta_gen =
      config.source == BootstrapSource::null_mean_at_theta_hat ? fits.hat.theta : fits.tilde.theta;
  const auto st = gls_state(model, theta_gen);
  const Vector mean = model.x() * mu_tilde(st, fits.null);
  const Matrix chol = st.sigma_llt.matrixL();

  auto draw = [&](int, Rng& rng) -> std::optional<std::array<double, 3>> {
    std::normal_distribution<double> gauss;
    Vector eps(model.n_obs());
    for (int k = 0; k < eps.size(); ++k) eps[k] = gauss(rng);
    const auto sim = model.with_response(mean + chol * eps);
    try {
      NullFits bf{FitResult{}, FitResult{}, 0.0, fits.null};
      if (need_hat || need_tilde) {
        bf.hat = fit(sim, kind, std::nullopt, config.fit);
        if (!bf.hat.converged) return std::nullopt;
      }
      if (need_tilde) {
        bf.tilde = fit(sim, kind, fits.null, config.fit);
        if (!bf.tilde.converged) return std::nullopt;
        bf.delta = delta(sim, kind, bf.hat, bf.tilde);
      }
      std::array<double, 3> out{0.0, 0.0, 0.0};
      for (auto k : kinds) out[static_cast<int>(k)] = bartlett_statistic(sim, bf, k, config.alpha, config.bartlett);
      return out;
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  BootstrapQuantiles q;
  q.sets = config.m;
  auto z = bootstrap_order_statistics<3>(config.m, config.alpha, config.seed, config.width, config.max_failure_rate,
                                         draw, &q.failures);
  auto has = [&](StatisticKind k) { return std::count(kinds.begin(), kinds.end(), k) > 0; };
  if (has(StatisticKind::wald)) q.z_star_w = z[0];
  if (has(StatisticKind::lr)) q.z_star_lr = z[1];
  if (has(StatisticKind::score)) q.z_star_s = z[2];
  return q;
}

/// Bootstrap-calibrated Bartlett interval: the chi-square point z^2 of the
/// Bartlett interval is replaced by z*, with the factor still evaluated at z^2.
/// Both bounds use the same half-width.
inline ConfidenceInterval bootstrap_adjusted_ci(const MarginalModel& model, const NullFits& fits,
                                                StatisticKind kind, double alpha, const BootstrapQuantiles& quantiles,
                                                const BartlettOptions& opts = {}) {
  const double zstar = quantiles.for_kind(kind);
  if (!std::isfinite(zstar) || zstar < 0.0)
    throw Error(ErrorCode::invalid_input, "bootstrap quantile for this statistic was not computed");
  const auto f = factors_for(model, fits, kind, alpha, opts);
  auto ci = detail::scaled_interval(model, fits, kind, alpha, Adjustment::bartlett_bootstrap, zstar,
                                    factor_for(f, kind));
  ci.warnings = f.warnings;
  return ci;
}

inline ConfidenceInterval bootstrap_adjusted_ci(const MarginalModel& model, const NullFits& fits,
                                                StatisticKind kind, const BootstrapConfig& config) {
  const auto q = bootstrap_quantiles(model, fits, {kind}, config);
  return bootstrap_adjusted_ci(model, fits, kind, config.alpha, q, config.bartlett);
}

}  // namespace nmaci
