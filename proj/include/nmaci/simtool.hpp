#pragma once

// Binomial data-generating process for two-arm network designs and the
// coverage-probability harness built on it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmaci/bootstrap.hpp"

namespace nmaci {

struct DesignEntry {
  std::string treatment;
  std::string comparator;
  int studies = 1;
};

struct ScenarioSpec {
  std::string name;
  std::vector<DesignEntry> designs;
  std::string reference = "P";
  std::map<std::string, double> true_effects;  // log odds ratio vs reference, per non-reference label
  std::map<std::string, double> nulls;         // defaults to true_effects
  double theta = 0.3;
  int subjects_min = 30;
  int subjects_max = 300;
  double reference_p_min = 0.05;
  double reference_p_max = 0.65;
  StructureKind structure = StructureKind::compound_symmetry;
  double log_base = 10.0;
  double correction = 0.5;
  int replications = 1000;
  std::uint64_t seed = 1;

  int total_studies() const {
    int n = 0;
    for (const auto& d : designs) n += d.studies;
    return n;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& [label, _] : true_effects) out.push_back(label);
    return out;
  }

  void validate() const {
    if (designs.empty()) throw Error(ErrorCode::invalid_input, "scenario has no designs");
    for (const auto& d : designs) {
      if (d.studies < 1) throw Error(ErrorCode::invalid_input, "design study counts must be >= 1");
      for (const auto& l : {d.treatment, d.comparator})
        if (l != reference && !true_effects.count(l))
          throw Error(ErrorCode::invalid_input, "design label '" + l + "' has no true effect");
    }
    if (!(reference_p_min > 0.0 && reference_p_max < 1.0 && reference_p_min <= reference_p_max))
      throw Error(ErrorCode::invalid_input, "reference probability range must lie within (0, 1)");
    if (subjects_min < 1 || subjects_max < subjects_min)
      throw Error(ErrorCode::invalid_input, "invalid subjects range");
    if (theta < 0.0) throw Error(ErrorCode::invalid_input, "theta must be >= 0");
    if (replications < 1) throw Error(ErrorCode::invalid_input, "replications must be >= 1");
  }

  double null_for(const std::string& label) const {
    auto it = nulls.find(label);
    return it != nulls.end() ? it->second : true_effects.at(label);
  }
};

namespace scenarios {

/// Four treatments (A, B, C vs placebo P); `total` is 10 or 30 studies.
inline ScenarioSpec simulation1(int total = 10) {
  if (total != 10 && total != 30) throw Error(ErrorCode::invalid_input, "simulation 1 has N = 10 or N = 30");
  const int k = total / 10;
  ScenarioSpec s;
  s.name = "simulation1_n" + std::to_string(total);
  s.designs = {{"A", "P", 3 * k}, {"B", "P", 2 * k}, {"C", "P", 2 * k}, {"A", "B", 2 * k}, {"A", "C", 1 * k}};
  s.true_effects = {{"A", 0.398}, {"B", 0.702}, {"C", 0.866}};
  return s;
}

/// Seven treatments (A..F vs placebo P) with fixed event probabilities;
/// `total` is 20 or 30 studies.
inline ScenarioSpec simulation2(int total = 20) {
  if (total != 20 && total != 30) throw Error(ErrorCode::invalid_input, "simulation 2 has N = 20 or N = 30");
  const int k = total / 10;
  ScenarioSpec s;
  s.name = "simulation2_n" + std::to_string(total);
  s.designs = {{"A", "P", 2 * k}, {"B", "P", k}, {"C", "P", k}, {"A", "B", 2 * k},
               {"A", "C", k},     {"D", "A", k}, {"E", "B", k}, {"F", "C", k}};
  const double p_ref = 0.6;
  auto odds = [](double p) { return p / (1.0 - p); };
  const std::map<std::string, double> probs{{"A", 0.6}, {"B", 0.65}, {"C", 0.7}, {"D", 0.75}, {"E", 0.8}, {"F", 0.85}};
  for (const auto& [label, p] : probs) s.true_effects[label] = std::log10(odds(p) / odds(p_ref));
  // Null values as stated for this scenario (three decimals).
  s.nulls = {{"A", 0.0}, {"B", 0.093}, {"C", 0.192}, {"D", 0.301}, {"E", 0.426}, {"F", 0.577}};
  s.reference_p_min = s.reference_p_max = p_ref;
  return s;
}

}  // namespace scenarios

/// One simulated meta-analysis. Deterministic in (spec.seed, replication).
inline std::vector<Study> generate_dataset(const ScenarioSpec& spec, int replication) {
  spec.validate();
  auto rng = stream(spec.seed, static_cast<std::uint64_t>(replication), 0xda7a);
  const auto labels = spec.labels();
  const int p = static_cast<int>(labels.size());
  Vector mu(p);
  for (int j = 0; j < p; ++j) mu[j] = spec.true_effects.at(labels[j]);
  const CovarianceStructure cs(spec.structure, p);
  const Matrix v = cs.v(cs.start_from_variance(spec.theta));
  Eigen::LLT<Matrix> llt(v);
  const Matrix chol = spec.theta > 0.0 ? Matrix(llt.matrixL()) : Matrix::Zero(p, p);

  std::uniform_int_distribution<int> subjects(spec.subjects_min, spec.subjects_max);
  std::uniform_real_distribution<double> p_ref(spec.reference_p_min, spec.reference_p_max);
  std::normal_distribution<double> gauss;

  std::vector<Study> out;
  int sid = 0;
  for (const auto& d : spec.designs) {
    for (int k = 0; k < d.studies; ++k, ++sid) {
      const int n = subjects(rng);
      const double pr = spec.reference_p_min == spec.reference_p_max ? spec.reference_p_min : p_ref(rng);
      Vector z(p);
      for (int j = 0; j < p; ++j) z[j] = gauss(rng);
      const Vector beta = mu + chol * z;
      auto prob = [&](const std::string& label) {
        const double odds_ref = pr / (1.0 - pr);
        if (label == spec.reference) return pr;
        const int j = static_cast<int>(std::find(labels.begin(), labels.end(), label) - labels.begin());
        const double odds = odds_ref * std::pow(spec.log_base, beta[j]);
        return odds / (1.0 + odds);
      };
      const double pc = prob(d.comparator);
      const double pt = prob(d.treatment);
      std::binomial_distribution<int> bc(n, pc), bt(n, pt);
      const double ec = bc(rng);
      const double et = bt(rng);
      std::ostringstream id;
      id << "s" << std::setw(3) << std::setfill('0') << sid + 1;
      out.push_back(study_from_arms(id.str(), {{d.comparator, ec, double(n)}, {d.treatment, et, double(n)}},
                                    spec.correction, spec.log_base));
    }
  }
  return out;
}

struct Method {
  LikelihoodKind estimator = LikelihoodKind::reml;
  StatisticKind statistic = StatisticKind::lr;
  Adjustment adjustment = Adjustment::none;

  std::string name() const {
    return std::string(to_string(estimator)) + ":" + std::string(to_string(statistic)) + ":" +
           std::string(to_string(adjustment));
  }
  bool operator==(const Method&) const = default;
};

inline std::vector<Method> all_methods(bool with_bootstrap = false) {
  std::vector<Method> out;
  for (auto e : {LikelihoodKind::ml, LikelihoodKind::reml})
    for (auto s : {StatisticKind::wald, StatisticKind::lr, StatisticKind::score}) {
      out.push_back({e, s, Adjustment::none});
      out.push_back({e, s, Adjustment::bartlett});
      if (with_bootstrap) out.push_back({e, s, Adjustment::bartlett_bootstrap});
    }
  return out;
}

struct CoverageConfig {
  double alpha = 0.05;
  int width = 1;
  FitConfig fit;
  BartlettOptions bartlett;
  int bootstrap_m = 1001;
  std::uint64_t bootstrap_seed = 7;
  std::vector<std::string> contrasts;  // empty: every non-reference label
  double max_failure_rate = 0.02;
  bool include_timing = false;         // wall time breaks byte-identical reports
};

struct CoverageRow {
  Method method;
  std::string contrast;
  double coverage = 0;   // percent
  double se = 0;         // percent
  double mean_width = 0;
  int replications = 0;
  int failures = 0;
  int degenerate = 0;    // LR intervals with negative radicand, counted as not covering
};

struct CoverageReport {
  std::string scenario;
  std::vector<CoverageRow> rows;
  int replications = 0;
  int failures = 0;
  double wall_seconds = 0;
  bool include_timing = false;

  const CoverageRow& row(const Method& m, const std::string& contrast) const {
    for (const auto& r : rows)
      if (r.method == m && r.contrast == contrast) return r;
    throw Error(ErrorCode::invalid_input, "no coverage row for " + m.name() + " / " + contrast);
  }
};

namespace detail {

struct CellOutcome {
  bool covered = false;
  bool degenerate = false;
  double width = 0;
};

inline std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

inline void finish_rows(CoverageReport& report, const std::vector<Method>& methods,
                        const std::vector<std::string>& contrasts,
                        const std::vector<std::vector<CellOutcome>>& outcomes, const std::vector<char>& ok) {
  int good = 0;
  for (char o : ok) good += o ? 1 : 0;
  report.failures = static_cast<int>(ok.size()) - good;
  report.replications = good;
  const auto nc = contrasts.size();
  for (std::size_t mi = 0; mi < methods.size(); ++mi)
    for (std::size_t ci = 0; ci < nc; ++ci) {
      CoverageRow row{methods[mi], contrasts[ci]};
      long covered = 0;
      double width = 0;
      int finite = 0;
      for (std::size_t r = 0; r < outcomes.size(); ++r) {
        if (!ok[r]) continue;
        const auto& cell = outcomes[r][mi * nc + ci];
        covered += cell.covered ? 1 : 0;
        if (cell.degenerate) {
          ++row.degenerate;
        } else {
          width += cell.width;
          ++finite;
        }
      }
      const double c = good ? static_cast<double>(covered) / good : 0.0;
      row.coverage = 100.0 * c;
      row.se = good ? 100.0 * std::sqrt(c * (1.0 - c) / good) : 0.0;
      row.mean_width = finite ? width / finite : 0.0;
      row.replications = good;
      row.failures = report.failures;
      report.rows.push_back(row);
    }
}

}  // namespace detail

inline CoverageReport coverage_study(const ScenarioSpec& spec, const std::vector<Method>& methods,
                                     const CoverageConfig& config = {}) {
  spec.validate();
  if (methods.empty()) throw Error(ErrorCode::invalid_input, "coverage study needs at least one method");
  const auto start = std::chrono::steady_clock::now();
  const auto labels = spec.labels();
  const auto contrasts = config.contrasts.empty() ? labels : config.contrasts;
  for (const auto& c : contrasts)
    if (!spec.true_effects.count(c)) throw Error(ErrorCode::invalid_input, "unknown contrast '" + c + "'");

  const int reps = spec.replications;
  std::vector<std::vector<detail::CellOutcome>> outcomes(reps);
  std::vector<char> ok(reps, 0);

  parallel_for(reps, config.width, [&](int rep) {
    try {
      const auto model = assemble(generate_dataset(spec, rep), spec.structure, spec.reference);
      std::vector<detail::CellOutcome> cells(methods.size() * contrasts.size());
      for (auto kind : {LikelihoodKind::ml, LikelihoodKind::reml}) {
        bool used = false;
        for (const auto& m : methods) used = used || m.estimator == kind;
        if (!used) continue;
        const auto hat = fit(model, kind, std::nullopt, config.fit);
        if (!hat.converged) return;
        for (std::size_t ci = 0; ci < contrasts.size(); ++ci) {
          const int idx = model.label_index(contrasts[ci]);
          const double truth = spec.true_effects.at(contrasts[ci]);
          const auto null = NullSpec::select(model.p(), idx, spec.null_for(contrasts[ci]));
          const auto fits = fit_null_pair(model, kind, hat, null, config.fit);
          if (!fits.tilde.converged) return;
          std::optional<BootstrapQuantiles> boot;
          for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const auto& m = methods[mi];
            if (m.estimator != kind) continue;
            auto& cell = cells[mi * contrasts.size() + ci];
            try {
              ConfidenceInterval ci_out;
              switch (m.adjustment) {
                case Adjustment::none: ci_out = naive_ci(model, fits, m.statistic, config.alpha); break;
                case Adjustment::bartlett:
                  ci_out = adjusted_ci(model, fits, m.statistic, config.alpha, config.bartlett);
                  break;
                case Adjustment::bartlett_bootstrap: {
                  if (!boot) {
                    std::vector<StatisticKind> kinds;
                    for (const auto& mm : methods)
                      if (mm.estimator == kind && mm.adjustment == Adjustment::bartlett_bootstrap)
                        kinds.push_back(mm.statistic);
                    BootstrapConfig bc;
                    bc.m = config.bootstrap_m;
                    bc.alpha = config.alpha;
                    bc.fit = config.fit;
                    bc.bartlett = config.bartlett;
                    bc.seed = detail::splitmix64(config.bootstrap_seed ^
                                                 detail::splitmix64((static_cast<std::uint64_t>(rep) << 16) ^
                                                                    (ci << 1) ^ static_cast<std::uint64_t>(kind)));
                    boot = bootstrap_quantiles(model, fits, kinds, bc);
                  }
                  ci_out = bootstrap_adjusted_ci(model, fits, m.statistic, config.alpha, *boot, config.bartlett);
                  break;
                }
              }
              cell.covered = ci_out.contains(truth);
              cell.width = ci_out.upper - ci_out.lower;
            } catch (const Error& e) {
              if (e.code() != ErrorCode::degenerate_interval) throw;
              cell.degenerate = true;
              cell.covered = false;
            }
          }
        }
      }
      outcomes[rep] = std::move(cells);
      ok[rep] = 1;
    } catch (const Error&) {
    }
  });

  CoverageReport report;
  report.scenario = spec.name;
  report.include_timing = config.include_timing;
  detail::finish_rows(report, methods, contrasts, outcomes, ok);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (report.failures > config.max_failure_rate * reps)
    throw Error(ErrorCode::refit_failure, "coverage study aborted: " + std::to_string(report.failures) + " of " +
                                              std::to_string(reps) + " replications failed");
  return report;
}

/// Coverage with Sigma known: y ~ N(X mu, Sigma(theta)) drawn directly and the
/// interval built at the true theta, where all three statistics coincide.
inline CoverageReport normal_shim_coverage(const MarginalModel& model, const Vector& theta, const Vector& mu,
                                           int replications, std::uint64_t seed, double alpha = 0.05,
                                           int width = 1) {
  const auto st = gls_state(model, theta);
  const Matrix chol = st.sigma_llt.matrixL();
  const Vector mean = model.x() * mu;
  const double z = z_critical(alpha);
  const int p = model.p();
  const std::vector<Method> methods{{LikelihoodKind::ml, StatisticKind::wald, Adjustment::none},
                                    {LikelihoodKind::ml, StatisticKind::lr, Adjustment::none},
                                    {LikelihoodKind::ml, StatisticKind::score, Adjustment::none}};
  std::vector<std::vector<detail::CellOutcome>> outcomes(replications);
  std::vector<char> ok(replications, 1);
  parallel_for(replications, width, [&](int rep) {
    auto rng = stream(seed, static_cast<std::uint64_t>(rep), 0x5417);
    std::normal_distribution<double> gauss;
    Vector eps(model.n_obs());
    for (int k = 0; k < eps.size(); ++k) eps[k] = gauss(rng);
    const Vector y = mean + chol * eps;
    const Vector mu_hat = st.a_llt.solve(st.sinv_x.transpose() * y);
    std::vector<detail::CellOutcome> cells(methods.size() * p);
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
      for (int j = 0; j < p; ++j) {
        const double half = z * std::sqrt(st.a_inv(j, j));
        auto& cell = cells[mi * p + j];
        cell.covered = std::abs(mu_hat[j] - mu[j]) <= half;
        cell.width = 2.0 * half;
      }
    outcomes[rep] = std::move(cells);
  });
  CoverageReport report;
  report.scenario = "exact-normal";
  detail::finish_rows(report, methods, model.labels(), outcomes, ok);
  return report;
}

// --- Report emission -------------------------------------------------------------

inline void write_tsv(std::ostream& os, const CoverageReport& report, bool full_precision = false) {
  const int digits = full_precision ? 17 : 6;
  os << "scenario\testimator\tstatistic\tadjustment\tcontrast\tcoverage\tse\tmean_width\treplications\tfailures"
        "\tdegenerate\n";
  for (const auto& r : report.rows)
    os << report.scenario << '\t' << to_string(r.method.estimator) << '\t' << to_string(r.method.statistic) << '\t'
       << to_string(r.method.adjustment) << '\t' << r.contrast << '\t' << detail::fmt(r.coverage, digits) << '\t'
       << detail::fmt(r.se, digits) << '\t' << detail::fmt(r.mean_width, digits) << '\t' << r.replications << '\t'
       << r.failures << '\t' << r.degenerate << '\n';
  if (report.include_timing) os << "# wall_seconds\t" << detail::fmt(report.wall_seconds) << '\n';
}

inline nlohmann::json to_json(const CoverageReport& report) {
  nlohmann::json j;
  j["scenario"] = report.scenario;
  j["replications"] = report.replications;
  j["failures"] = report.failures;
  if (report.include_timing) j["wall_seconds"] = report.wall_seconds;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back({{"estimator", to_string(r.method.estimator)},
                         {"statistic", to_string(r.method.statistic)},
                         {"adjustment", to_string(r.method.adjustment)},
                         {"contrast", r.contrast},
                         {"coverage", r.coverage},
                         {"se", r.se},
                         {"mean_width", r.mean_width},
                         {"replications", r.replications},
                         {"failures", r.failures},
                         {"degenerate", r.degenerate}});
  return j;
}

// --- Scenario files (JSON) ---------------------------------------------------------

inline StructureKind parse_structure(const std::string& s) {
  if (s == "cs" || s == "compound-symmetry" || s == "compound_symmetry") return StructureKind::compound_symmetry;
  if (s == "dh" || s == "diagonal-homogeneous" || s == "diagonal_homogeneous")
    return StructureKind::diagonal_homogeneous;
  if (s == "diag" || s == "diagonal") return StructureKind::diagonal;
  if (s == "un" || s == "unstructured") return StructureKind::unstructured;
  throw Error(ErrorCode::invalid_input, "unknown covariance structure '" + s + "'");
}

/// {"name", "preset": "simulation1"|"simulation2", "studies", "designs": [[t, c, k], ...],
///  "reference", "true_effects": {label: value}, "nulls": {...}, "theta", "subjects": [lo, hi],
///  "reference_p": [lo, hi], "structure", "log_base", "correction", "replications", "seed"}
inline ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  try {
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      const int studies = j.value("studies", preset == "simulation2" ? 20 : 10);
      if (preset == "simulation1") s = scenarios::simulation1(studies);
      else if (preset == "simulation2") s = scenarios::simulation2(studies);
      else throw Error(ErrorCode::invalid_input, "unknown preset '" + preset + "'");
    }
    static const std::set<std::string> known{"name",    "preset",      "studies",    "designs",   "reference",
                                             "true_effects", "nulls",  "theta",      "subjects",  "reference_p",
                                             "structure", "log_base",  "correction", "replications", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) throw Error(ErrorCode::invalid_input, "unknown scenario key '" + it.key() + "'");
    if (j.contains("name")) s.name = j["name"].get<std::string>();
    if (j.contains("designs")) {
      s.designs.clear();
      for (const auto& d : j["designs"]) s.designs.push_back({d.at(0).get<std::string>(), d.at(1).get<std::string>(), d.at(2).get<int>()});
    }
    if (j.contains("reference")) s.reference = j["reference"].get<std::string>();
    if (j.contains("true_effects")) s.true_effects = j["true_effects"].get<std::map<std::string, double>>();
    if (j.contains("nulls")) s.nulls = j["nulls"].get<std::map<std::string, double>>();
    if (j.contains("theta")) s.theta = j["theta"].get<double>();
    if (j.contains("subjects")) {
      s.subjects_min = j["subjects"].at(0).get<int>();
      s.subjects_max = j["subjects"].at(1).get<int>();
    }
    if (j.contains("reference_p")) {
      s.reference_p_min = j["reference_p"].at(0).get<double>();
      s.reference_p_max = j["reference_p"].at(1).get<double>();
    }
    if (j.contains("structure")) s.structure = parse_structure(j["structure"].get<std::string>());
    if (j.contains("log_base")) s.log_base = j["log_base"].get<double>();
    if (j.contains("correction")) s.correction = j["correction"].get<double>();
    if (j.contains("replications")) s.replications = j["replications"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace nmaci
