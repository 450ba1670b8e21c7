#pragma once

// Maximisation of the profile objectives over theta.
//
// The primary optimiser is Fisher scoring in the natural (linear) theta
// parametrisation with projection onto the variance bounds, switching to
// Newton steps on a finite-difference Hessian of the analytic gradient once
// close to the optimum. A Nelder-Mead search on log / log-Cholesky
// coordinates is the fallback when scoring stalls.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "nmaci/likelihood.hpp"

namespace nmaci {

enum class StartRule { method_of_moments, user };

struct FitConfig {
  double tolerance = 1e-8;   // on the Newton decrement sqrt(g' I^-1 g) over free coordinates
  int max_iterations = 200;
  int restarts = 3;          // starts: {t0, 0.1 t0, 10 t0, 0.01 t0, 100 t0, ...}
  StartRule start = StartRule::method_of_moments;
  std::optional<Vector> initial_theta;  // used when start == StartRule::user
  bool simplex_fallback = true;
};

struct FitResult {
  Vector theta;
  LikelihoodKind kind = LikelihoodKind::reml;
  bool constrained = false;
  std::optional<NullSpec> null;
  double objective_value = 0;
  Vector mu;  // mu_hat(theta) or mu_tilde(theta)
  double h2 = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
  bool boundary = false;
  double gradient_norm = 0;
};

namespace detail {

inline double free_decrement(const Vector& g, const Matrix& info, const std::vector<int>& free) {
  if (free.empty()) return 0.0;
  const int k = static_cast<int>(free.size());
  Vector gf(k);
  Matrix inf(k, k);
  for (int a = 0; a < k; ++a) {
    gf[a] = g[free[a]];
    for (int b = 0; b < k; ++b) inf(a, b) = info(free[a], free[b]);
  }
  Eigen::LDLT<Matrix> ldlt(inf);
  const double d = gf.dot(ldlt.solve(gf));
  return std::sqrt(std::max(0.0, d));
}

inline std::vector<int> free_coordinates(const CovarianceStructure& cs, const Vector& theta, const Vector& g) {
  std::vector<int> free;
  for (int i = 0; i < theta.size(); ++i)
    if (!(cs.is_variance(i) && theta[i] <= 0.0 && g[i] <= 0.0)) free.push_back(i);
  return free;
}

inline bool at_boundary(const CovarianceStructure& cs, const Vector& theta) {
  for (int i = 0; i < theta.size(); ++i)
    if (cs.is_variance(i) && theta[i] <= 0.0) return true;
  if (cs.kind() == StructureKind::unstructured) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cs.v(theta), Eigen::EigenvaluesOnly);
    const double scale = std::max(1e-300, theta.head(cs.dim()).maxCoeff());
    if (es.eigenvalues().minCoeff() <= 1e-8 * scale) return true;
  }
  return false;
}

inline Vector project(const CovarianceStructure& cs, Vector theta) {
  for (int i = 0; i < theta.size(); ++i)
    if (cs.is_variance(i) && theta[i] < 0.0) theta[i] = 0.0;
  return theta;
}

struct RunResult {
  Vector theta;
  double value = -std::numeric_limits<double>::infinity();
  double decrement = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Finite-difference Hessian of the analytic gradient (free block only).
inline std::optional<Matrix> fd_hessian(const ProfileObjective& obj, const Vector& theta,
                                        const std::vector<int>& free, double scale) {
  const int k = static_cast<int>(free.size());
  Matrix h(k, k);
  const auto& cs = obj.model.structure();
  for (int a = 0; a < k; ++a) {
    const int i = free[a];
    const double step = 1e-5 * std::max(std::abs(theta[i]), scale);
    Vector tp = theta, tm = theta;
    tp[i] += step;
    tm[i] -= step;
    double denom = 2.0 * step;
    if (cs.is_variance(i) && tm[i] < 0.0) {
      tm[i] = theta[i];
      denom = step;
    }
    auto ep = try_evaluate(obj, tp, true, false);
    auto em = try_evaluate(obj, tm, true, false);
    if (!ep || !em) return std::nullopt;
    for (int b = 0; b < k; ++b) h(b, a) = (ep->gradient[free[b]] - em->gradient[free[b]]) / denom;
  }
  return Matrix(0.5 * (h + h.transpose()));
}

inline RunResult run_scoring(const ProfileObjective& obj, Vector theta, const FitConfig& cfg) {
  const auto& cs = obj.model.structure();
  RunResult out;
  auto ev = try_evaluate(obj, theta, true, true);
  if (!ev) return out;
  out.theta = theta;
  out.value = ev->value;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    out.iterations = it;
    const auto free = free_coordinates(cs, theta, ev->gradient);
    const double dec = free_decrement(ev->gradient, ev->information, free);
    out.decrement = dec;
    if (dec <= cfg.tolerance) {
      out.converged = true;
      break;
    }
    const int k = static_cast<int>(free.size());
    Vector gf(k);
    Matrix inf(k, k);
    for (int a = 0; a < k; ++a) {
      gf[a] = ev->gradient[free[a]];
      for (int b = 0; b < k; ++b) inf(a, b) = ev->information(free[a], free[b]);
    }
    Vector step = Eigen::LDLT<Matrix>(inf).solve(gf);
    const double scale = std::max(1e-12, cs.variance_scale(theta));
    if (dec < 1e-2) {
      if (auto h = fd_hessian(obj, theta, free, scale)) {
        Eigen::LLT<Matrix> neg(-*h);
        if (neg.info() == Eigen::Success) step = neg.solve(gf);
      }
    }
    Vector full = Vector::Zero(theta.size());
    for (int a = 0; a < k; ++a) full[free[a]] = step[a];

    // Near the optimum value differences are at rounding level; accept the
    // full step unless it is clearly worse.
    const double slack = dec < 1e-4 ? 1e-12 * (1.0 + std::abs(ev->value)) : 0.0;
    bool moved = false;
    double s = 1.0;
    for (int h = 0; h < 60; ++h, s *= 0.5) {
      Vector cand = project(cs, theta + s * full);
      if (!cs.admissible(cand)) continue;
      auto ce = try_evaluate(obj, cand, true, true);
      if (!ce) continue;
      if (ce->value >= ev->value - slack) {
        moved = (cand - theta).cwiseAbs().maxCoeff() > 0.0;
        theta = std::move(cand);
        ev = std::move(ce);
        break;
      }
    }
    out.theta = theta;
    out.value = ev->value;
    if (!moved) break;
  }
  if (!out.converged) {
    const auto free = free_coordinates(cs, theta, ev->gradient);
    out.decrement = free_decrement(ev->gradient, ev->information, free);
    out.converged = out.decrement <= cfg.tolerance;
  }
  return out;
}

// -- Nelder-Mead fallback on log / log-Cholesky coordinates --------------------

inline Vector to_internal(const CovarianceStructure& cs, const Vector& theta) {
  if (cs.kind() != StructureKind::unstructured) {
    Vector phi(theta.size());
    for (int i = 0; i < theta.size(); ++i) phi[i] = std::log(std::max(theta[i], 1e-12));
    return phi;
  }
  const int p = cs.dim();
  Matrix v = cs.v(theta);
  v.diagonal().array() += 1e-10 * std::max(1.0, v.diagonal().maxCoeff());
  Eigen::LLT<Matrix> llt(v);
  Matrix l = llt.info() == Eigen::Success ? Matrix(llt.matrixL()) : Matrix(v.diagonal().cwiseSqrt().asDiagonal());
  Vector phi(cs.parameter_count());
  int k = 0;
  for (int i = 0; i < p; ++i) phi[k++] = std::log(std::max(l(i, i), 1e-12));
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < r; ++c) phi[k++] = l(r, c);
  return phi;
}

inline Vector from_internal(const CovarianceStructure& cs, const Vector& phi) {
  if (cs.kind() != StructureKind::unstructured) return phi.array().exp().matrix();
  const int p = cs.dim();
  Matrix l = Matrix::Zero(p, p);
  int k = 0;
  for (int i = 0; i < p; ++i) l(i, i) = std::exp(phi[k++]);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < r; ++c) l(r, c) = phi[k++];
  const Matrix v = l * l.transpose();
  Vector theta(cs.parameter_count());
  for (int i = 0; i < cs.parameter_count(); ++i) {
    auto [r, c] = cs.position(i);
    theta[i] = v(r, c);
  }
  return theta;
}

inline RunResult run_simplex(const ProfileObjective& obj, const Vector& start, const FitConfig& cfg) {
  const auto& cs = obj.model.structure();
  const int n = static_cast<int>(start.size());
  auto f = [&](const Vector& phi) {
    auto ev = try_evaluate(obj, from_internal(cs, phi), false, false);
    return ev ? -ev->value : std::numeric_limits<double>::infinity();
  };
  std::vector<Vector> pts(n + 1, to_internal(cs, start));
  for (int i = 0; i < n; ++i) pts[i + 1][i] += 0.5;
  std::vector<double> vals(n + 1);
  for (int i = 0; i <= n; ++i) vals[i] = f(pts[i]);

  RunResult out;
  const int max_evals = 400 * (n + 1) * std::max(1, cfg.max_iterations / 50);
  int evals = n + 1;
  while (evals < max_evals) {
    std::vector<int> order(n + 1);
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    std::vector<Vector> p2;
    std::vector<double> v2;
    for (int i : order) {
      p2.push_back(pts[i]);
      v2.push_back(vals[i]);
    }
    pts = std::move(p2);
    vals = std::move(v2);
    double size = 0;
    for (int i = 1; i <= n; ++i) size = std::max(size, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
    if (std::abs(vals[n] - vals[0]) <= 1e-14 * (1.0 + std::abs(vals[0])) && size < 1e-9) break;

    Vector centroid = Vector::Zero(n);
    for (int i = 0; i < n; ++i) centroid += pts[i];
    centroid /= n;
    const Vector xr = centroid + (centroid - pts[n]);
    const double fr = f(xr);
    ++evals;
    if (fr < vals[0]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[n]);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts[n] = xe;
        vals[n] = fe;
      } else {
        pts[n] = xr;
        vals[n] = fr;
      }
    } else if (fr < vals[n - 1]) {
      pts[n] = xr;
      vals[n] = fr;
    } else {
      const Vector xc = fr < vals[n] ? Vector(centroid + 0.5 * (xr - centroid))
                                     : Vector(centroid + 0.5 * (pts[n] - centroid));
      const double fc = f(xc);
      ++evals;
      if (fc < std::min(fr, vals[n])) {
        pts[n] = xc;
        vals[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          vals[i] = f(pts[i]);
          ++evals;
        }
      }
    }
  }
  int best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  out.theta = from_internal(cs, pts[best]);
  out.value = -vals[best];
  out.iterations = evals;

  // Snap vanishing variances onto the bound when that does not lose objective.
  Vector snapped = out.theta;
  for (int i = 0; i < snapped.size(); ++i)
    if (cs.is_variance(i) && snapped[i] < 1e-9 * std::max(1.0, cs.variance_scale(snapped)))
      snapped[i] = 0.0;
  if (snapped != out.theta && cs.admissible(snapped))
    if (auto ev = try_evaluate(obj, snapped, false, false); ev && ev->value >= out.value) {
      out.theta = snapped;
      out.value = ev->value;
    }
  if (auto ev = try_evaluate(obj, out.theta, true, true)) {
    const auto free = free_coordinates(cs, out.theta, ev->gradient);
    out.decrement = free_decrement(ev->gradient, ev->information, free);
    out.converged = out.decrement <= std::max(cfg.tolerance, 1e-5) || at_boundary(cs, out.theta);
  }
  return out;
}

/// Moment-based start: OLS residual variance in excess of the average
/// within-study variance.
inline Vector moment_start(const MarginalModel& m) {
  const Matrix& x = m.x();
  const Vector beta = (x.transpose() * x).ldlt().solve(x.transpose() * m.y());
  const Vector e = m.y() - x * beta;
  const double s2 = e.squaredNorm() / std::max(1, m.n_obs() - m.p());
  const double rbar = m.r().trace() / m.n_obs();
  double base = s2 - rbar;
  base = std::max({base, 0.05 * std::max(s2, rbar), 1e-8});
  return m.structure().start_from_variance(base);
}

}  // namespace detail

/// Maximises the selected profile objective over admissible theta.
inline FitResult fit(const MarginalModel& model, LikelihoodKind kind, const std::optional<NullSpec>& constraint = std::nullopt,
                     const FitConfig& config = {}) {
  if (!(config.tolerance > 0.0)) throw Error(ErrorCode::invalid_input, "fit tolerance must be positive");
  if (constraint) constraint->validate(model.p());
  const auto& cs = model.structure();
  ProfileObjective obj{model, kind, constraint};

  Vector base;
  if (config.start == StartRule::user) {
    if (!config.initial_theta) throw Error(ErrorCode::invalid_input, "user start rule needs initial_theta");
    base = *config.initial_theta;
    cs.check_size(base);
  } else {
    base = detail::moment_start(model);
  }

  std::vector<Vector> starts;
  const int n_starts = std::max(1, config.restarts);
  for (int k = 0; k < n_starts; ++k) {
    double mult = 1.0;
    if (k > 0) mult = std::pow(10.0, ((k + 1) / 2) * (k % 2 == 1 ? -1.0 : 1.0));
    starts.push_back(base * mult);
  }
  if (n_starts > 1) {
    // The profile can be multimodal: add the zero-heterogeneity corner and,
    // for unstructured V, the start with off-diagonal signs flipped or zeroed.
    starts.push_back(Vector::Zero(base.size()));
    if (cs.kind() == StructureKind::unstructured) {
      Vector flipped = base, zeroed = base;
      for (int i = 0; i < base.size(); ++i) {
        const auto [r, c] = cs.position(i);
        if (r != c) {
          flipped[i] = -base[i];
          zeroed[i] = 0.0;
        }
      }
      starts.push_back(flipped);
      starts.push_back(zeroed);
    }
  }

  std::optional<detail::RunResult> best;
  int total_iterations = 0;
  for (auto start : starts) {
    start = detail::project(cs, start);
    // Grow a start that does not give a positive definite Sigma.
    for (int g = 0; g < 30 && !try_gls_state(model, start); ++g) start = start * 10.0 + Vector::Constant(start.size(), 1e-8);
    if (!cs.admissible(start) || !try_gls_state(model, start)) continue;
    auto run = detail::run_scoring(obj, start, config);
    total_iterations += run.iterations;
    if (!run.converged && config.simplex_fallback) {
      auto alt = detail::run_simplex(obj, run.theta.size() ? run.theta : start, config);
      total_iterations += alt.iterations;
      if (alt.converged || alt.value > run.value) {
        // Polish with scoring from the simplex optimum.
        auto polished = detail::run_scoring(obj, alt.theta, config);
        run = polished.value >= alt.value ? polished : alt;
        if (!run.converged && alt.converged) run.converged = true;
      }
    }
    if (!std::isfinite(run.value)) continue;
    auto better = [&](const detail::RunResult& a, const detail::RunResult& b) {
      if (a.converged != b.converged) return a.converged;
      const double tol = 1e-10 * (1.0 + std::abs(b.value));
      if (a.value > b.value + tol) return true;
      if (b.value > a.value + tol) return false;
      return a.theta.norm() < b.theta.norm();
    };
    if (!best || better(run, *best)) best = std::move(run);
  }
  if (!best)
    throw Error(ErrorCode::not_positive_definite, "objective is undefined at every starting point");

  FitResult out;
  out.theta = best->theta;
  out.kind = kind;
  out.constrained = constraint.has_value();
  out.null = constraint;
  out.converged = best->converged;
  out.iterations = total_iterations;
  out.gradient_norm = best->decrement;
  out.boundary = detail::at_boundary(cs, out.theta);
  const auto st = gls_state(model, out.theta);
  out.objective_value = detail::profile_value(obj, st, detail::profile_mean(obj, st));
  out.mu = detail::profile_mean(obj, st);
  if (constraint) out.h2 = h_squared(st, *constraint);
  return out;
}

/// delta = l(mu_hat(theta_tilde), theta_tilde) - l(mu_hat(theta_hat), theta_hat).
inline double delta(const MarginalModel& model, LikelihoodKind kind, const FitResult& fit_hat,
                    const FitResult& fit_tilde) {
  if (fit_hat.kind != kind || fit_tilde.kind != kind)
    throw Error(ErrorCode::kind_mismatch, "delta needs two fits of the same likelihood kind");
  if (fit_hat.constrained || !fit_tilde.constrained)
    throw Error(ErrorCode::kind_mismatch, "delta needs an unconstrained and a constrained fit");
  const ProfileObjective unconstrained{model, kind, std::nullopt};
  return objective(unconstrained, fit_tilde.theta) - fit_hat.objective_value;
}

/// Unconstrained and null-constrained fits of one kind plus their delta.
struct NullFits {
  FitResult hat;
  FitResult tilde;
  double delta = 0;
  NullSpec null;
};

inline NullFits fit_null_pair(const MarginalModel& model, LikelihoodKind kind, const FitResult& hat,
                              const NullSpec& null, const FitConfig& config = {}) {
  NullFits out{hat, fit(model, kind, null, config), 0.0, null};
  out.delta = delta(model, kind, out.hat, out.tilde);
  if (out.delta > 0.0) {
    // theta_tilde beats theta_hat on the unconstrained objective: the first fit
    // stopped at a local optimum. Climb again from theta_tilde.
    FitConfig again = config;
    again.start = StartRule::user;
    again.initial_theta = out.tilde.theta;
    again.restarts = 1;
    auto refit = fit(model, kind, std::nullopt, again);
    if (refit.objective_value > out.hat.objective_value) {
      refit.iterations += out.hat.iterations;
      out.hat = std::move(refit);
      out.delta = delta(model, kind, out.hat, out.tilde);
    }
  }
  return out;
}

inline NullFits fit_null_pair(const MarginalModel& model, LikelihoodKind kind, const NullSpec& null,
                              const FitConfig& config = {}) {
  return fit_null_pair(model, kind, fit(model, kind, std::nullopt, config), null, config);
}

}  // namespace nmaci
