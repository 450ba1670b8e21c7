#pragma once

// End-to-end analysis of one data set: fits, statistics, naive and adjusted
// intervals per contrast, and report / forest-plot emission.

#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmaci/bootstrap.hpp"
#include "nmaci/io.hpp"

namespace nmaci {

enum class OutputFormat { tsv, json };

struct AnalysisConfig {
  LikelihoodKind estimator = LikelihoodKind::reml;
  std::vector<StatisticKind> statistics{StatisticKind::lr};
  Adjustment adjustment = Adjustment::none;
  double alpha = 0.05;
  std::map<std::string, double> nulls;  // per label; missing labels default to 0
  StructureKind structure = StructureKind::compound_symmetry;
  std::string reference;                // empty: most frequent comparator
  int bootstrap_m = 1001;
  std::uint64_t seed = 20240601;
  int width = 1;
  double log_base = 10.0;
  OutputFormat format = OutputFormat::tsv;
  bool full_precision = false;
  FitConfig fit;
  BartlettOptions bartlett;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 0.5)) throw Error(ErrorCode::invalid_input, "alpha must lie in (0, 0.5)");
    if (statistics.empty()) throw Error(ErrorCode::invalid_input, "at least one statistic is required");
    if (adjustment == Adjustment::bartlett_bootstrap && bootstrap_m < 99)
      throw Error(ErrorCode::invalid_input, "bootstrap needs m >= 99");
  }
};

struct AnalysisRow {
  std::string contrast;   // "T-reference"
  StatisticKind statistic = StatisticKind::lr;
  Adjustment adjustment = Adjustment::none;
  double estimate = 0;    // r'mu_hat(theta_hat)
  double std_error = 0;   // h(theta_hat)
  double null_value = 0;
  double value = 0;       // statistic at the null
  std::optional<ConfidenceInterval> naive;
  std::optional<ConfidenceInterval> adjusted;
  double factor = 1.0;
  double z_star = std::numeric_limits<double>::quiet_NaN();
  Vector theta_hat;
  Vector theta_tilde;
  double delta = 0;
  bool converged_hat = false;
  bool converged_tilde = false;
  std::string status = "ok";
  std::vector<std::string> warnings;
};

struct AnalysisReport {
  LikelihoodKind estimator = LikelihoodKind::reml;
  StructureKind structure = StructureKind::compound_symmetry;
  std::string reference;
  double alpha = 0.05;
  int n_studies = 0;
  int n_obs = 0;
  std::vector<AnalysisRow> rows;

  bool all_converged() const {
    for (const auto& r : rows)
      if (!r.converged_hat || !r.converged_tilde) return false;
    return true;
  }
};

/// Most frequent comparator; ties go to the first label in sorted order.
inline std::string default_reference(const std::vector<Study>& studies) {
  std::map<std::string, int> count;
  for (const auto& s : studies)
    for (const auto& c : s.contrasts) count[c.comparator]++;
  if (count.empty()) throw Error(ErrorCode::invalid_input, "no treatment labels");
  auto best = count.begin();
  for (auto it = count.begin(); it != count.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

inline AnalysisReport run_analysis(const AnalysisConfig& config, const std::vector<Study>& studies,
                                   std::ostream* log = nullptr) {
  config.validate();
  const std::string reference = config.reference.empty() ? default_reference(studies) : config.reference;
  const auto model = assemble(studies, config.structure, reference);
  for (const auto& [label, _] : config.nulls)
    if (model.label_index(label) < 0)
      throw Error(ErrorCode::invalid_input, "--null names unknown or reference label '" + label + "'");

  AnalysisReport report;
  report.estimator = config.estimator;
  report.structure = config.structure;
  report.reference = reference;
  report.alpha = config.alpha;
  report.n_studies = model.n_studies();
  report.n_obs = model.n_obs();

  const auto hat = fit(model, config.estimator, std::nullopt, config.fit);
  if (log) *log << "fitted theta_hat = " << hat.theta.transpose() << (hat.converged ? "" : " (not converged)") << '\n';
  const auto st_hat = gls_state(model, hat.theta);

  for (int j = 0; j < model.p(); ++j) {
    const auto& label = model.labels()[j];
    auto it = config.nulls.find(label);
    const double mu0 = it == config.nulls.end() ? 0.0 : it->second;
    const auto null = NullSpec::select(model.p(), j, mu0);
    const auto fits = fit_null_pair(model, config.estimator, hat, null, config.fit);
    if (log) *log << "contrast " << label << ": theta_tilde = " << fits.tilde.theta.transpose() << '\n';

    std::optional<BootstrapQuantiles> boot;
    if (config.adjustment == Adjustment::bartlett_bootstrap) {
      BootstrapConfig bc;
      bc.m = config.bootstrap_m;
      bc.seed = detail::splitmix64(config.seed ^ static_cast<std::uint64_t>(j));
      bc.alpha = config.alpha;
      bc.width = config.width;
      bc.fit = config.fit;
      bc.bartlett = config.bartlett;
      boot = bootstrap_quantiles(model, fits, config.statistics, bc);
    }

    for (auto kind : config.statistics) {
      AnalysisRow row;
      row.contrast = label + "-" + reference;
      row.statistic = kind;
      row.adjustment = config.adjustment;
      row.estimate = st_hat.mu_hat[j];
      row.std_error = std::sqrt(h_squared(st_hat, null));
      row.null_value = mu0;
      row.value = statistic(model, fits, kind);
      row.theta_hat = fits.hat.theta;
      row.theta_tilde = fits.tilde.theta;
      row.delta = fits.delta;
      row.converged_hat = fits.hat.converged;
      row.converged_tilde = fits.tilde.converged;
      try {
        row.naive = naive_ci(model, fits, kind, config.alpha);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_interval) throw;
        row.status = "degenerate";
        row.warnings.push_back(e.what());
      }
      if (config.adjustment != Adjustment::none) {
        try {
          row.adjusted = config.adjustment == Adjustment::bartlett
                             ? adjusted_ci(model, fits, kind, config.alpha, config.bartlett)
                             : bootstrap_adjusted_ci(model, fits, kind, config.alpha, *boot, config.bartlett);
          row.factor = row.adjusted->factor;
          for (const auto& w : row.adjusted->warnings) row.warnings.push_back(w);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::degenerate_interval) throw;
          row.status = row.status == "ok" ? "degenerate_adjusted" : "degenerate";
          row.warnings.push_back(e.what());
          row.factor = factor_for(factors_for(model, fits, kind, config.alpha, config.bartlett), kind);
        }
        if (boot) row.z_star = boot->for_kind(kind);
      }
      if (!row.converged_hat || !row.converged_tilde) row.warnings.push_back("fit did not converge");
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace detail {

inline std::string num(double v, bool full) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(full ? 17 : 6) << v;
  return os.str();
}

inline std::string num_list(const Vector& v, bool full) {
  std::string out;
  for (int i = 0; i < v.size(); ++i) out += (i ? ";" : "") + num(v[i], full);
  return out;
}

inline std::string join(const std::vector<std::string>& xs, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
  return out;
}

constexpr double na = std::numeric_limits<double>::quiet_NaN();

}  // namespace detail

inline void write_report_tsv(std::ostream& os, const AnalysisReport& rep, bool full = false) {
  using detail::num;
  os << "contrast\testimator\tstatistic\tadjustment\testimate\tstd_error\tnull\tvalue\tnaive_lower\tnaive_upper"
        "\tadjusted_lower\tadjusted_upper\tfactor\tz_star\ttheta_hat\ttheta_tilde\tdelta\tconverged_hat"
        "\tconverged_tilde\tstatus\twarnings\n";
  for (const auto& r : rep.rows) {
    os << r.contrast << '\t' << to_string(rep.estimator) << '\t' << to_string(r.statistic) << '\t'
       << to_string(r.adjustment) << '\t' << num(r.estimate, full) << '\t' << num(r.std_error, full) << '\t'
       << num(r.null_value, full) << '\t' << num(r.value, full) << '\t'
       << num(r.naive ? r.naive->lower : detail::na, full) << '\t' << num(r.naive ? r.naive->upper : detail::na, full)
       << '\t' << num(r.adjusted ? r.adjusted->lower : detail::na, full) << '\t'
       << num(r.adjusted ? r.adjusted->upper : detail::na, full) << '\t' << num(r.factor, full) << '\t'
       << num(r.z_star, full) << '\t' << detail::num_list(r.theta_hat, full) << '\t'
       << detail::num_list(r.theta_tilde, full) << '\t' << num(r.delta, full) << '\t' << r.converged_hat << '\t'
       << r.converged_tilde << '\t' << r.status << '\t' << detail::join(r.warnings, " | ") << '\n';
  }
}

inline nlohmann::json report_json(const AnalysisReport& rep, bool full = false) {
  // Rounded through the same formatter as the TSV so both agree digit for digit.
  auto n = [&](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return std::stod(detail::num(v, full));
  };
  auto vec = [&](const Vector& v) {
    auto a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(n(v[i]));
    return a;
  };
  auto ci = [&](const std::optional<ConfidenceInterval>& c) -> nlohmann::json {
    if (!c) return nullptr;
    return {{"lower", n(c->lower)}, {"upper", n(c->upper)}, {"center", n(c->center)}, {"half_width", n(c->half_width)}};
  };
  nlohmann::json j;
  j["estimator"] = to_string(rep.estimator);
  j["structure"] = to_string(rep.structure);
  j["reference"] = rep.reference;
  j["alpha"] = rep.alpha;
  j["studies"] = rep.n_studies;
  j["observations"] = rep.n_obs;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"contrast", r.contrast},
                         {"statistic", to_string(r.statistic)},
                         {"adjustment", to_string(r.adjustment)},
                         {"estimate", n(r.estimate)},
                         {"std_error", n(r.std_error)},
                         {"null", n(r.null_value)},
                         {"value", n(r.value)},
                         {"naive", ci(r.naive)},
                         {"adjusted", ci(r.adjusted)},
                         {"factor", n(r.factor)},
                         {"z_star", n(r.z_star)},
                         {"theta_hat", vec(r.theta_hat)},
                         {"theta_tilde", vec(r.theta_tilde)},
                         {"delta", n(r.delta)},
                         {"converged_hat", r.converged_hat},
                         {"converged_tilde", r.converged_tilde},
                         {"status", r.status},
                         {"warnings", r.warnings}});
  return j;
}

/// contrast, center, lower, upper, method; one line per available interval.
inline void write_forest_tsv(std::ostream& os, const AnalysisReport& rep, bool full = false) {
  using detail::num;
  os << "contrast\tcenter\tlower\tupper\tmethod\n";
  for (const auto& r : rep.rows) {
    const std::string base = std::string(to_string(rep.estimator)) + " " + std::string(to_string(r.statistic));
    if (r.naive)
      os << r.contrast << '\t' << num(r.naive->center, full) << '\t' << num(r.naive->lower, full) << '\t'
         << num(r.naive->upper, full) << '\t' << base << " none\n";
    if (r.adjusted)
      os << r.contrast << '\t' << num(r.adjusted->center, full) << '\t' << num(r.adjusted->lower, full) << '\t'
         << num(r.adjusted->upper, full) << '\t' << base << ' ' << to_string(r.adjustment) << '\n';
  }
}

}  // namespace nmaci
