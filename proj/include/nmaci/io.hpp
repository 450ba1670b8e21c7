#pragma once

// CSV / JSON study input and a normalized writer.
//
// Contrast format: study_id,treatment,comparator,estimate,std_error
//   Contrasts of one study that share a comparator get covariance s_1 s_2 / 2;
//   a companion covariance file (study_id,contrast_a,contrast_b,covariance)
//   overrides individual entries, contrasts named "T-C".
// Arm format: study_id,treatment,events,total
//   The first listed arm of each study is its baseline.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmaci/model.hpp"

namespace nmaci {

enum class InputFormat { contrast, arm };

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based source line of each row
  std::string source;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Error parse_error(const std::string& source, int line, const std::string& what) {
  return Error(ErrorCode::parse_error, source + ":" + std::to_string(line) + ": " + what);
}

inline CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto fields = split_csv(s);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw parse_error(source, no,
                        "expected " + std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(no);
  }
  if (t.header.empty()) throw Error(ErrorCode::parse_error, source + ": empty file");
  if (t.rows.empty()) throw Error(ErrorCode::parse_error, source + ": no data rows");
  return t;
}

inline double to_number(const CsvTable& t, std::size_t row, int col) {
  const auto& s = t.rows[row][col];
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v))
    throw parse_error(t.source, t.lines[row], "column '" + t.header[col] + "': '" + s + "' is not a number");
  return v;
}

inline void require_columns(const CsvTable& t, const std::vector<std::string>& cols) {
  for (const auto& h : t.header)
    if (std::find(cols.begin(), cols.end(), h) == cols.end())
      throw Error(ErrorCode::parse_error, t.source + ":1: unknown column '" + h + "'");
  for (const auto& c : cols)
    if (t.column(c) < 0) throw Error(ErrorCode::parse_error, t.source + ":1: missing column '" + c + "'");
}

inline const std::vector<std::string>& contrast_columns() {
  static const std::vector<std::string> c{"study_id", "treatment", "comparator", "estimate", "std_error"};
  return c;
}

inline const std::vector<std::string>& arm_columns() {
  static const std::vector<std::string> c{"study_id", "treatment", "events", "total"};
  return c;
}

inline const std::vector<std::string>& covariance_columns() {
  static const std::vector<std::string> c{"study_id", "contrast_a", "contrast_b", "covariance"};
  return c;
}

/// Groups rows by study id, keeping first-appearance order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> group_rows(const CsvTable& t) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  std::map<std::string, std::size_t> where;
  const int sid = t.column("study_id");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& id = t.rows[r][sid];
    if (id.empty()) throw parse_error(t.source, t.lines[r], "empty study_id");
    auto [it, fresh] = where.emplace(id, groups.size());
    if (fresh) groups.push_back({id, {}});
    groups[it->second].second.push_back(r);
  }
  return groups;
}

inline std::vector<Study> studies_from_contrast_table(const CsvTable& t) {
  require_columns(t, contrast_columns());
  const int ct = t.column("treatment"), cc = t.column("comparator"), ce = t.column("estimate"),
            cs = t.column("std_error");
  std::vector<Study> out;
  for (const auto& [id, rows] : group_rows(t)) {
    const int k = static_cast<int>(rows.size());
    Study s{id, {}, Vector(k), Matrix::Zero(k, k)};
    Vector se(k);
    for (int j = 0; j < k; ++j) {
      const auto r = rows[j];
      Contrast c{t.rows[r][ct], t.rows[r][cc]};
      if (c.treatment.empty() || c.comparator.empty()) throw parse_error(t.source, t.lines[r], "empty treatment label");
      if (std::find(s.contrasts.begin(), s.contrasts.end(), c) != s.contrasts.end())
        throw parse_error(t.source, t.lines[r], "contrast " + c.name() + " repeated in study '" + id + "'");
      s.contrasts.push_back(c);
      s.estimates[j] = to_number(t, r, ce);
      se[j] = to_number(t, r, cs);
      if (se[j] < 0.0) throw parse_error(t.source, t.lines[r], "std_error must be >= 0");
      s.within_cov(j, j) = se[j] * se[j];
    }
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b && s.contrasts[a].comparator == s.contrasts[b].comparator)
          s.within_cov(a, b) = se[a] * se[b] / 2.0;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Study> studies_from_arm_table(const CsvTable& t, double correction, double log_base) {
  require_columns(t, arm_columns());
  const int ct = t.column("treatment"), ce = t.column("events"), cn = t.column("total");
  std::vector<Study> out;
  for (const auto& [id, rows] : group_rows(t)) {
    std::vector<Arm> arms;
    for (auto r : rows) {
      Arm a{t.rows[r][ct], to_number(t, r, ce), to_number(t, r, cn)};
      if (a.label.empty()) throw parse_error(t.source, t.lines[r], "empty treatment label");
      for (const auto& b : arms)
        if (b.label == a.label) throw parse_error(t.source, t.lines[r], "arm '" + a.label + "' repeated in study '" + id + "'");
      arms.push_back(a);
    }
    if (arms.size() < 2) throw parse_error(t.source, t.lines[rows[0]], "study '" + id + "' needs at least two arms");
    try {
      out.push_back(study_from_arms(id, arms, correction, log_base));
    } catch (const Error& e) {
      throw parse_error(t.source, t.lines[rows[0]], e.what());
    }
  }
  return out;
}

inline void apply_covariance_table(const CsvTable& t, std::vector<Study>& studies) {
  require_columns(t, covariance_columns());
  const int sid = t.column("study_id"), ca = t.column("contrast_a"), cb = t.column("contrast_b"),
            cv = t.column("covariance");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& id = t.rows[r][sid];
    auto st = std::find_if(studies.begin(), studies.end(), [&](const Study& s) { return s.id == id; });
    if (st == studies.end()) throw parse_error(t.source, t.lines[r], "unknown study '" + id + "'");
    auto find = [&](const std::string& name) {
      for (std::size_t j = 0; j < st->contrasts.size(); ++j)
        if (st->contrasts[j].name() == name) return static_cast<int>(j);
      throw parse_error(t.source, t.lines[r], "study '" + id + "' has no contrast '" + name + "'");
    };
    const int a = find(t.rows[r][ca]);
    const int b = find(t.rows[r][cb]);
    const double v = to_number(t, r, cv);
    st->within_cov(a, b) = v;
    st->within_cov(b, a) = v;
  }
}

}  // namespace detail

inline std::vector<Study> read_studies_csv(std::istream& in, const std::string& source = "<input>",
                                           double correction = 0.5, double log_base = 10.0) {
  const auto t = detail::read_csv(in, source);
  if (t.column("events") >= 0 || t.column("total") >= 0) return detail::studies_from_arm_table(t, correction, log_base);
  return detail::studies_from_contrast_table(t);
}

inline std::vector<Study> read_studies_json(std::istream& in, const std::string& source = "<input>") {
  std::vector<Study> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& js : j.at("studies")) {
      Study s;
      s.id = js.at("id").get<std::string>();
      for (const auto& c : js.at("contrasts")) s.contrasts.push_back({c.at(0).get<std::string>(), c.at(1).get<std::string>()});
      const auto est = js.at("estimates").get<std::vector<double>>();
      const auto cov = js.at("covariance").get<std::vector<std::vector<double>>>();
      const int k = static_cast<int>(s.contrasts.size());
      if (static_cast<int>(est.size()) != k || static_cast<int>(cov.size()) != k)
        throw Error(ErrorCode::parse_error, source + ": study '" + s.id + "': inconsistent dimensions");
      s.estimates = Vector::Map(est.data(), k);
      s.within_cov.resize(k, k);
      for (int a = 0; a < k; ++a) {
        if (static_cast<int>(cov[a].size()) != k)
          throw Error(ErrorCode::parse_error, source + ": study '" + s.id + "': inconsistent dimensions");
        for (int b = 0; b < k; ++b) s.within_cov(a, b) = cov[a][b];
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, source + ": " + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::parse_error, source + ": no studies");
  return out;
}

/// Reads a study file (".json" or CSV) and an optional covariance CSV.
inline std::vector<Study> parse_contrast_file(const std::string& path, const std::optional<std::string>& cov_path = {},
                                              double correction = 0.5, double log_base = 10.0) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::invalid_input, "cannot open '" + path + "'");
  const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  auto studies = json ? read_studies_json(in, path) : read_studies_csv(in, path, correction, log_base);
  if (cov_path) {
    std::ifstream cin(*cov_path);
    if (!cin) throw Error(ErrorCode::invalid_input, "cannot open '" + *cov_path + "'");
    detail::apply_covariance_table(detail::read_csv(cin, *cov_path), studies);
  }
  return studies;
}

/// Contrast-format CSV plus a covariance CSV holding every within-study entry,
/// at full precision, so parsing the pair reproduces the studies exactly.
inline void write_normalized(const std::vector<Study>& studies, std::ostream& contrasts, std::ostream& covariance) {
  contrasts << std::setprecision(17);
  covariance << std::setprecision(17);
  contrasts << "study_id,treatment,comparator,estimate,std_error\n";
  covariance << "study_id,contrast_a,contrast_b,covariance\n";
  for (const auto& s : studies) {
    const auto k = s.contrasts.size();
    for (std::size_t j = 0; j < k; ++j)
      contrasts << s.id << ',' << s.contrasts[j].treatment << ',' << s.contrasts[j].comparator << ','
                << s.estimates[j] << ',' << std::sqrt(s.within_cov(j, j)) << '\n';
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a; b < k; ++b)
        covariance << s.id << ',' << s.contrasts[a].name() << ',' << s.contrasts[b].name() << ','
                   << s.within_cov(a, b) << '\n';
  }
}

}  // namespace nmaci
