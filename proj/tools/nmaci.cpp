// nmaci: closed-form confidence intervals for random-effects network meta-analysis.
//
//   nmaci analyze data.csv [--cov cov.csv] [--estimator reml] [--stat lr] ...
//   nmaci simulate scenario.json [--methods all] [--reps 2000] ...
//   nmaci normalize data.csv --out prefix
//
// Set NMACI_VERBOSE=1 for progress on stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nmaci/nmaci.hpp"

namespace {

using namespace nmaci;

enum Exit { ok = 0, usage = 2, failure = 3, nonconverged = 4 };

int fail(const Error& e) {
  nlohmann::json j{{"error", to_string(e.code())}, {"message", e.what()}};
  std::cerr << j.dump() << '\n';
  return failure;
}

bool verbose() {
  const char* v = std::getenv("NMACI_VERBOSE");
  return v && *v && std::string(v) != "0";
}

LikelihoodKind parse_estimator(const std::string& s) {
  if (s == "ml") return LikelihoodKind::ml;
  if (s == "reml") return LikelihoodKind::reml;
  throw Error(ErrorCode::invalid_input, "unknown estimator '" + s + "'");
}

StatisticKind parse_statistic(const std::string& s) {
  if (s == "wald") return StatisticKind::wald;
  if (s == "lr") return StatisticKind::lr;
  if (s == "score") return StatisticKind::score;
  throw Error(ErrorCode::invalid_input, "unknown statistic '" + s + "'");
}

Adjustment parse_adjustment(const std::string& s) {
  if (s == "none") return Adjustment::none;
  if (s == "bartlett") return Adjustment::bartlett;
  if (s == "bootstrap") return Adjustment::bartlett_bootstrap;
  throw Error(ErrorCode::invalid_input, "unknown adjustment '" + s + "'");
}

double parse_base(const std::string& s) {
  if (s == "10") return 10.0;
  if (s == "e") return std::exp(1.0);
  throw Error(ErrorCode::invalid_input, "log base must be 10 or e");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::invalid_input, "cannot write '" + path + "'");
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-form Wald / LR / score intervals for random-effects network meta-analysis"};
  app.require_subcommand(1);

  // analyze
  auto* an = app.add_subcommand("analyze", "Analyze one data set");
  std::string input, cov, estimator = "reml", adjust = "none", structure = "cs", base = "10", out, format = "tsv",
                      reference;
  std::vector<std::string> stats{"lr"}, nulls;
  double alpha = 0.05;
  int boot_m = 1001, width = 1;
  std::uint64_t seed = 20240601;
  bool full = false, allow_nonconverged = false;
  int max_iterations = -1;
  an->add_option("input", input, "Contrast or arm-level CSV, or JSON")->required();
  an->add_option("--cov", cov, "Covariance CSV overriding within-study entries");
  an->add_option("--estimator", estimator, "ml or reml")->capture_default_str();
  an->add_option("--stat", stats, "wald, lr, score (repeatable)")->capture_default_str();
  an->add_option("--adjust", adjust, "none, bartlett or bootstrap")->capture_default_str();
  an->add_option("--alpha", alpha, "Two-sided level")->capture_default_str();
  an->add_option("--null", nulls, "label=value (repeatable; default 0)");
  an->add_option("--structure", structure, "cs, dh, diag or un")->capture_default_str();
  an->add_option("--reference", reference, "Reference label (default: most frequent comparator)");
  an->add_option("--boot-m", boot_m, "Bootstrap sets")->capture_default_str();
  an->add_option("--seed", seed, "Bootstrap seed")->capture_default_str();
  an->add_option("--threads", width, "Bootstrap threads")->capture_default_str();
  an->add_option("--base", base, "Effect log base: 10 or e")->capture_default_str();
  an->add_option("--out", out, "Output prefix (writes <out>.tsv|json and <out>.forest.tsv); stdout if empty");
  an->add_option("--format", format, "tsv or json")->capture_default_str();
  an->add_flag("--full-precision", full, "Print 17 significant digits");
  an->add_flag("--allow-nonconverged", allow_nonconverged, "Exit 0 even if a fit did not converge");
  // Hidden: caps scoring iterations and disables the simplex fallback (testing aid).
  an->add_option("--max-iterations", max_iterations)->group("");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Coverage study from a scenario file");
  std::string scenario, methods = "all";
  int reps = 0, sim_boot_m = 501;
  std::vector<std::string> contrasts;
  sim->add_option("scenario", scenario, "Scenario JSON")->required();
  sim->add_option("--methods", methods, "all, all+bootstrap, or comma list of estimator:stat:adjust")
      ->capture_default_str();
  sim->add_option("--reps", reps, "Override replications");
  sim->add_option("--boot-m", sim_boot_m, "Bootstrap sets per replication")->capture_default_str();
  sim->add_option("--seed", seed, "Bootstrap seed")->capture_default_str();
  sim->add_option("--threads", width, "Threads")->capture_default_str();
  sim->add_option("--contrast", contrasts, "Restrict to these labels (repeatable)");
  sim->add_option("--out", out, "Output path; stdout if empty");
  sim->add_option("--format", format, "tsv or json")->capture_default_str();
  sim->add_option("--alpha", alpha, "Two-sided level")->capture_default_str();
  sim->add_flag("--full-precision", full, "Print 17 significant digits");

  // normalize
  auto* norm = app.add_subcommand("normalize", "Rewrite input as contrast CSV plus full covariance CSV");
  norm->add_option("input", input, "Contrast or arm-level CSV, or JSON")->required();
  norm->add_option("--cov", cov, "Covariance CSV");
  norm->add_option("--base", base, "Effect log base: 10 or e")->capture_default_str();
  norm->add_option("--out", out, "Output prefix (writes <out>.csv and <out>.cov.csv)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (format != "tsv" && format != "json") throw Error(ErrorCode::invalid_input, "format must be tsv or json");
    const std::optional<std::string> cov_path = cov.empty() ? std::nullopt : std::optional<std::string>(cov);

    if (*an) {
      AnalysisConfig cfg;
      cfg.estimator = parse_estimator(estimator);
      cfg.statistics.clear();
      for (const auto& s : stats) cfg.statistics.push_back(parse_statistic(s));
      cfg.adjustment = parse_adjustment(adjust);
      cfg.alpha = alpha;
      for (const auto& n : nulls) {
        const auto eq = n.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::invalid_input, "--null expects label=value");
        try {
          cfg.nulls[n.substr(0, eq)] = std::stod(n.substr(eq + 1));
        } catch (const std::exception&) {
          throw Error(ErrorCode::invalid_input, "--null value is not a number: '" + n + "'");
        }
      }
      cfg.structure = parse_structure(structure);
      cfg.reference = reference;
      cfg.bootstrap_m = boot_m;
      cfg.seed = seed;
      cfg.width = width;
      cfg.log_base = parse_base(base);
      cfg.full_precision = full;
      if (max_iterations >= 0) {
        cfg.fit.max_iterations = max_iterations;
        cfg.fit.simplex_fallback = false;
      }

      const auto studies = parse_contrast_file(input, cov_path, 0.5, cfg.log_base);
      const auto report = run_analysis(cfg, studies, verbose() ? &std::cerr : nullptr);
      auto emit = [&](std::ostream& os) {
        if (format == "json")
          os << report_json(report, full).dump(2) << '\n';
        else
          write_report_tsv(os, report, full);
      };
      if (out.empty()) {
        emit(std::cout);
      } else {
        auto f = open_out(out + (format == "json" ? ".json" : ".tsv"));
        emit(f);
        auto forest = open_out(out + ".forest.tsv");
        write_forest_tsv(forest, report, full);
      }
      if (!report.all_converged() && !allow_nonconverged) {
        nlohmann::json j{{"error", "nonconverged"}, {"message", "at least one fit did not converge"}};
        std::cerr << j.dump() << '\n';
        return nonconverged;
      }
      return ok;
    }

    if (*sim) {
      std::ifstream f(scenario);
      if (!f) throw Error(ErrorCode::invalid_input, "cannot open '" + scenario + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse_error, scenario + ": " + e.what());
      }
      auto spec = scenario_from_json(j);
      if (reps > 0) spec.replications = reps;
      std::vector<Method> ms;
      if (methods == "all" || methods == "all+bootstrap") {
        ms = all_methods(methods == "all+bootstrap");
      } else {
        std::stringstream ss(methods);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto a = item.find(':'), b = item.rfind(':');
          if (a == std::string::npos || a == b) throw Error(ErrorCode::invalid_input, "method '" + item + "'");
          ms.push_back({parse_estimator(item.substr(0, a)), parse_statistic(item.substr(a + 1, b - a - 1)),
                        parse_adjustment(item.substr(b + 1))});
        }
      }
      CoverageConfig cc;
      cc.alpha = alpha;
      cc.width = width;
      cc.bootstrap_m = sim_boot_m;
      cc.bootstrap_seed = seed;
      cc.contrasts = contrasts;
      cc.include_timing = verbose();
      const auto report = coverage_study(spec, ms, cc);
      auto emit = [&](std::ostream& os) {
        if (format == "json")
          os << to_json(report).dump(2) << '\n';
        else
          write_tsv(os, report, full);
      };
      if (out.empty()) {
        emit(std::cout);
      } else {
        auto o = open_out(out);
        emit(o);
      }
      return ok;
    }

    if (*norm) {
      const auto studies = parse_contrast_file(input, cov_path, 0.5, parse_base(base));
      auto c = open_out(out + ".csv");
      auto v = open_out(out + ".cov.csv");
      write_normalized(studies, c, v);
      return ok;
    }
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return failure;
  }
  return usage;
}
