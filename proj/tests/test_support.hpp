#pragma once

#include <random>
#include <string>
#include <vector>

#include "nmaci/nmaci.hpp"

namespace nmaci::testing {

/// One single-contrast study per value, no within-study variance: Sigma = theta I.
inline std::vector<Study> diagonal_studies(const std::vector<double>& y) {
  std::vector<Study> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    out.push_back({"d" + std::to_string(i + 1), {{"A", "P"}}, Vector::Constant(1, y[i]), Matrix::Zero(1, 1)});
  return out;
}

inline MarginalModel diagonal_model(const std::vector<double>& y = {1, 2, 3, 6}) {
  return assemble(diagonal_studies(y), StructureKind::diagonal_homogeneous, "P");
}

/// Three studies: {A-P, B-P}, {A-P}, {B-P}, shared-comparator covariance in study 1.
inline std::vector<Study> three_study_example(double s_ap = 0.2, double s_bp = 0.25) {
  Matrix r1(2, 2);
  r1 << s_ap * s_ap, s_ap * s_bp / 2, s_ap * s_bp / 2, s_bp * s_bp;
  return {
      {"s1", {{"A", "P"}, {"B", "P"}}, (Vector(2) << 0.42, 0.65).finished(), r1},
      {"s2", {{"A", "P"}}, Vector::Constant(1, 0.35), Matrix::Constant(1, 1, s_ap * s_ap)},
      {"s3", {{"B", "P"}}, Vector::Constant(1, 0.71), Matrix::Constant(1, 1, s_bp * s_bp)},
  };
}

/// The first simulated data set of the four-treatment scenario with 10 studies.
inline MarginalModel simulation1_model() {
  const auto spec = scenarios::simulation1(10);
  return assemble(generate_dataset(spec, 0), spec.structure, spec.reference);
}

struct RandomInstance {
  std::vector<Study> studies;
  StructureKind structure;
  MarginalModel model;
  NullSpec null;
};

/// Small connected network with p in {1, 2, 3} treatments against P, two- and
/// three-arm studies, random within-study variances and a random null.
inline RandomInstance random_instance(std::mt19937_64& rng, bool allow_unstructured = false) {
  std::uniform_int_distribution<int> pick_p(1, 3);
  std::uniform_real_distribution<double> se(0.1, 0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int p = pick_p(rng);
  const std::vector<std::string> labels{"A", "B", "C"};
  const std::vector<double> effect{0.3, 0.6, -0.2};
  std::vector<Study> studies;
  int id = 0;
  auto add = [&](const std::string& t, const std::string& c) {
    const double s = se(rng);
    const double mt = t == "P" ? 0.0 : effect[t[0] - 'A'];
    const double mc = c == "P" ? 0.0 : effect[c[0] - 'A'];
    studies.push_back({"r" + std::to_string(++id), {{t, c}}, Vector::Constant(1, mt - mc + 0.5 * noise(rng)),
                       Matrix::Constant(1, 1, s * s)});
  };
  for (int j = 0; j < p; ++j) {
    add(labels[j], "P");
    add(labels[j], "P");
  }
  std::uniform_int_distribution<int> extra(0, 3);
  const int n_extra = extra(rng);
  for (int k = 0; k < n_extra; ++k) {
    std::uniform_int_distribution<int> which(0, p - 1);
    add(labels[which(rng)], "P");
  }
  if (p >= 2) {
    // One three-arm study.
    const double s1 = se(rng), s2 = se(rng);
    Matrix r(2, 2);
    r << s1 * s1, s1 * s2 / 2, s1 * s2 / 2, s2 * s2;
    studies.push_back({"r" + std::to_string(++id), {{"A", "P"}, {"B", "P"}},
                       (Vector(2) << 0.3 + 0.5 * noise(rng), 0.6 + 0.5 * noise(rng)).finished(), r});
  }
  std::vector<StructureKind> kinds{StructureKind::compound_symmetry, StructureKind::diagonal_homogeneous,
                                   StructureKind::diagonal};
  if (allow_unstructured) kinds.push_back(StructureKind::unstructured);
  std::uniform_int_distribution<int> pick_kind(0, static_cast<int>(kinds.size()) - 1);
  const auto kind = kinds[pick_kind(rng)];
  auto model = assemble(studies, kind, "P");
  std::uniform_int_distribution<int> pick_idx(0, p - 1);
  const int idx = pick_idx(rng);
  const auto null = NullSpec::select(p, idx, effect[idx] + 0.3 * noise(rng));
  return {std::move(studies), kind, std::move(model), null};
}

/// Random admissible theta for a structure (strictly interior).
inline Vector random_theta(const CovarianceStructure& cs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector theta(cs.parameter_count());
  for (int i = 0; i < theta.size(); ++i) theta[i] = u(rng);
  if (cs.kind() == StructureKind::unstructured) {
    // theta from a random Cholesky factor so V is positive definite.
    const int d = cs.dim();
    Matrix l = Matrix::Zero(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b <= a; ++b) l(a, b) = a == b ? u(rng) + 0.2 : 0.3 * (u(rng) - 0.5);
    const Matrix v = l * l.transpose();
    for (int i = 0; i < theta.size(); ++i) {
      const auto [r, c] = cs.position(i);
      theta[i] = v(r, c);
    }
  }
  return theta;
}

}  // namespace nmaci::testing
