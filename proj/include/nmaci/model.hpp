#pragma once

// Contrast-based random-effects network meta-analysis model:
//   y = X mu + eps,  eps ~ N(0, Sigma(theta)),  Sigma(theta) = R + Z diag(V(theta), ..., V(theta)) Z'
// Each study contributes p_i contrasts of a treatment against a comparator.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nmaci/error.hpp"

namespace nmaci {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Contrast {
  std::string treatment;
  std::string comparator;

  std::string name() const { return treatment + "-" + comparator; }
  bool operator==(const Contrast&) const = default;
};

/// Per-study contrast estimates with their known within-study covariance.
struct Study {
  std::string id;
  std::vector<Contrast> contrasts;
  Vector estimates;
  Matrix within_cov;
};

enum class StructureKind {
  compound_symmetry,     // diagonal theta, off-diagonal theta/2
  diagonal_homogeneous,  // theta * I
  diagonal,              // diag(theta_1..theta_p)
  unstructured,          // theta_1..theta_p on the diagonal, then off-diagonals row-major
};

inline std::string_view to_string(StructureKind kind) {
  switch (kind) {
    case StructureKind::compound_symmetry: return "compound-symmetry";
    case StructureKind::diagonal_homogeneous: return "diagonal-homogeneous";
    case StructureKind::diagonal: return "diagonal";
    case StructureKind::unstructured: return "unstructured";
  }
  return "unknown";
}

/// Between-study covariance V(theta). Every supported structure is linear in
/// theta, so dV/dtheta_i is a constant matrix and second derivatives vanish.
class CovarianceStructure {
 public:
  CovarianceStructure(StructureKind kind, int dim) : kind_(kind), dim_(dim) {
    if (dim < 1) throw Error(ErrorCode::invalid_input, "covariance dimension must be >= 1");
    build_derivatives();
  }

  StructureKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int parameter_count() const { return static_cast<int>(derivs_.size()); }

  /// dV/dtheta_i.
  const std::vector<Matrix>& derivatives() const { return derivs_; }

  /// Whether theta_i is a variance (bounded below by zero) rather than a covariance.
  bool is_variance(int i) const {
    return kind_ != StructureKind::unstructured || i < dim_;
  }

  /// Row/column of V addressed by theta_i.
  std::pair<int, int> position(int i) const {
    if (kind_ != StructureKind::unstructured) return {std::min(i, dim_ - 1), std::min(i, dim_ - 1)};
    if (i < dim_) return {i, i};
    int k = dim_;
    for (int r = 0; r < dim_; ++r)
      for (int c = r + 1; c < dim_; ++c, ++k)
        if (k == i) return {r, c};
    return {0, 0};
  }

  /// Largest |theta_i| over the variance coordinates.
  double variance_scale(const Vector& theta) const {
    double m = 0.0;
    for (int i = 0; i < parameter_count(); ++i)
      if (is_variance(i)) m = std::max(m, std::abs(theta[i]));
    return m;
  }

  Matrix v(const Vector& theta) const {
    check_size(theta);
    Matrix out = Matrix::Zero(dim_, dim_);
    for (int i = 0; i < parameter_count(); ++i) out += theta[i] * derivs_[i];
    return out;
  }

  bool admissible(const Vector& theta) const {
    if (theta.size() != parameter_count()) return false;
    if (!theta.allFinite()) return false;
    for (int i = 0; i < parameter_count(); ++i)
      if (is_variance(i) && theta[i] < 0.0) return false;
    if (kind_ == StructureKind::unstructured) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(v(theta), Eigen::EigenvaluesOnly);
      const double scale = std::max(1.0, theta.head(dim_).cwiseAbs().maxCoeff());
      if (es.eigenvalues().minCoeff() < -1e-12 * scale) return false;
    }
    return true;
  }

  /// Theta that makes V(theta) equal to `variance` times the compound-symmetry
  /// pattern (or the closest shape this structure supports).
  Vector start_from_variance(double variance) const {
    Vector theta = Vector::Zero(parameter_count());
    switch (kind_) {
      case StructureKind::compound_symmetry:
      case StructureKind::diagonal_homogeneous:
        theta[0] = variance;
        break;
      case StructureKind::diagonal:
        theta.setConstant(variance);
        break;
      case StructureKind::unstructured:
        theta.head(dim_).setConstant(variance);
        theta.tail(parameter_count() - dim_).setConstant(variance / 2.0);
        break;
    }
    return theta;
  }

  void check_size(const Vector& theta) const {
    if (theta.size() != parameter_count())
      throw Error(ErrorCode::inadmissible_theta,
                  "theta has " + std::to_string(theta.size()) + " entries, structure needs " +
                      std::to_string(parameter_count()));
  }

 private:
  void build_derivatives() {
    const int p = dim_;
    switch (kind_) {
      case StructureKind::compound_symmetry: {
        Matrix d = Matrix::Constant(p, p, 0.5);
        d.diagonal().setOnes();
        derivs_.push_back(d);
        break;
      }
      case StructureKind::diagonal_homogeneous:
        derivs_.push_back(Matrix::Identity(p, p));
        break;
      case StructureKind::diagonal:
        for (int i = 0; i < p; ++i) {
          Matrix d = Matrix::Zero(p, p);
          d(i, i) = 1.0;
          derivs_.push_back(d);
        }
        break;
      case StructureKind::unstructured:
        for (int i = 0; i < p; ++i) {
          Matrix d = Matrix::Zero(p, p);
          d(i, i) = 1.0;
          derivs_.push_back(d);
        }
        for (int r = 0; r < p; ++r)
          for (int c = r + 1; c < p; ++c) {
            Matrix d = Matrix::Zero(p, p);
            d(r, c) = d(c, r) = 1.0;
            derivs_.push_back(d);
          }
        break;
    }
  }

  StructureKind kind_;
  int dim_;
  std::vector<Matrix> derivs_;
};

/// Selector of one contrast and its hypothesised value: H0 r'mu = r'mu0.
struct NullSpec {
  Vector r;
  Vector mu0;

  static NullSpec select(int p, int index, double value) {
    if (index < 0 || index >= p)
      throw Error(ErrorCode::invalid_input, "contrast index out of range");
    NullSpec out{Vector::Zero(p), Vector::Zero(p)};
    out.r[index] = 1.0;
    out.mu0[index] = value;
    return out;
  }

  int index() const {
    int idx = -1;
    for (int i = 0; i < r.size(); ++i)
      if (r[i] != 0.0) {
        if (idx >= 0 || r[i] != 1.0) return -1;
        idx = i;
      }
    return idx;
  }

  double value() const { return r.dot(mu0); }

  void validate(int p) const {
    if (r.size() != p || mu0.size() != p)
      throw Error(ErrorCode::invalid_input, "null specification has wrong length");
    if (index() < 0)
      throw Error(ErrorCode::invalid_input, "null selector must have exactly one entry equal to 1");
  }
};

/// Assembled marginal model. Immutable; copies share the design and only the
/// response vector is owned per instance (bootstrap resamples swap y).
class MarginalModel {
 public:
  struct Design {
    Matrix x;
    Matrix r;
    Matrix z;
    CovarianceStructure structure;
    std::vector<std::string> labels;
    std::string reference;
    std::vector<std::string> study_ids;
    std::vector<int> study_offsets;  // row offset of each study, plus N at the end
    std::vector<Matrix> sigma_derivs;  // dSigma/dtheta_i = Z diag(dV_i) Z'
  };

  MarginalModel(std::shared_ptr<const Design> design, Vector y)
      : design_(std::move(design)), y_(std::move(y)) {}

  const Vector& y() const { return y_; }
  const Matrix& x() const { return design_->x; }
  const Matrix& r() const { return design_->r; }
  const Matrix& z() const { return design_->z; }
  const CovarianceStructure& structure() const { return design_->structure; }
  const std::vector<std::string>& labels() const { return design_->labels; }
  const std::string& reference() const { return design_->reference; }
  const std::vector<std::string>& study_ids() const { return design_->study_ids; }
  const std::vector<int>& study_offsets() const { return design_->study_offsets; }
  const std::vector<Matrix>& sigma_derivatives() const { return design_->sigma_derivs; }

  int n_studies() const { return static_cast<int>(design_->study_ids.size()); }
  int n_obs() const { return static_cast<int>(y_.size()); }
  int p() const { return static_cast<int>(design_->x.cols()); }
  int q() const { return design_->structure.parameter_count(); }

  MarginalModel with_response(Vector y) const {
    if (y.size() != y_.size()) throw Error(ErrorCode::invalid_input, "response length mismatch");
    return MarginalModel(design_, std::move(y));
  }

  int label_index(const std::string& label) const {
    auto it = std::find(labels().begin(), labels().end(), label);
    return it == labels().end() ? -1 : static_cast<int>(it - labels().begin());
  }

  /// Sigma(theta) without positive-definiteness checks.
  Matrix sigma_unchecked(const Vector& theta) const {
    Matrix out = design_->r;
    for (int i = 0; i < q(); ++i) out += theta[i] * design_->sigma_derivs[i];
    return out;
  }

 private:
  std::shared_ptr<const Design> design_;
  Vector y_;
};

namespace detail {

inline double scale_of(const Matrix& m) {
  return std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline void check_within_cov(const Study& s) {
  const auto& c = s.within_cov;
  const double scale = scale_of(c);
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error(ErrorCode::invalid_covariance, "study '" + s.id + "': within-study covariance not symmetric");
  if (!c.allFinite())
    throw Error(ErrorCode::invalid_covariance, "study '" + s.id + "': within-study covariance not finite");
  Eigen::SelfAdjointEigenSolver<Matrix> es(c, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw Error(ErrorCode::invalid_covariance,
                "study '" + s.id + "': within-study covariance not positive semidefinite");
}

}  // namespace detail

/// Builds the marginal model. Non-reference labels become columns in sorted
/// order; a contrast row holds +1 for the treatment and -1 for the comparator.
inline MarginalModel assemble(const std::vector<Study>& studies, StructureKind kind,
                              const std::string& reference) {
  if (studies.empty()) throw Error(ErrorCode::invalid_input, "at least one study is required");

  std::set<std::string> ids;
  std::set<std::string> all_labels;
  int n_rows = 0;
  for (const auto& s : studies) {
    if (!ids.insert(s.id).second)
      throw Error(ErrorCode::duplicate_study, "duplicate study id '" + s.id + "'");
    const auto pi = static_cast<int>(s.contrasts.size());
    if (pi < 1) throw Error(ErrorCode::invalid_input, "study '" + s.id + "' has no contrasts");
    if (s.estimates.size() != pi || s.within_cov.rows() != pi || s.within_cov.cols() != pi)
      throw Error(ErrorCode::invalid_input, "study '" + s.id + "': inconsistent dimensions");
    for (const auto& c : s.contrasts) {
      if (c.treatment == c.comparator)
        throw Error(ErrorCode::invalid_input, "study '" + s.id + "': contrast compares a label with itself");
      all_labels.insert(c.treatment);
      all_labels.insert(c.comparator);
    }
    detail::check_within_cov(s);
    n_rows += pi;
  }
  if (!all_labels.count(reference))
    throw Error(ErrorCode::invalid_input, "reference '" + reference + "' does not occur in any study");

  // Connectivity over shared-study edges.
  std::map<std::string, std::set<std::string>> adj;
  for (const auto& s : studies) {
    std::set<std::string> arms;
    for (const auto& c : s.contrasts) {
      arms.insert(c.treatment);
      arms.insert(c.comparator);
    }
    for (const auto& a : arms)
      for (const auto& b : arms)
        if (a != b) adj[a].insert(b);
  }
  std::set<std::string> seen{reference};
  std::queue<std::string> frontier;
  frontier.push(reference);
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop();
    for (const auto& nb : adj[cur])
      if (seen.insert(nb).second) frontier.push(nb);
  }
  if (seen.size() != all_labels.size()) {
    std::string missing;
    for (const auto& l : all_labels)
      if (!seen.count(l)) missing += (missing.empty() ? "" : ", ") + l;
    throw Error(ErrorCode::disconnected_network, "treatments not connected to reference: " + missing);
  }

  std::vector<std::string> labels;
  for (const auto& l : all_labels)
    if (l != reference) labels.push_back(l);
  const int p = static_cast<int>(labels.size());
  if (p < 1) throw Error(ErrorCode::invalid_input, "network has no non-reference treatment");
  auto column = [&](const std::string& l) {
    return static_cast<int>(std::find(labels.begin(), labels.end(), l) - labels.begin());
  };

  const int n = static_cast<int>(studies.size());
  auto design = std::make_shared<MarginalModel::Design>(MarginalModel::Design{
      Matrix::Zero(n_rows, p), Matrix::Zero(n_rows, n_rows), Matrix::Zero(n_rows, n * p),
      CovarianceStructure(kind, p), labels, reference, {}, {}, {}});
  Vector y(n_rows);
  int row = 0;
  for (int i = 0; i < n; ++i) {
    const auto& s = studies[i];
    const auto pi = static_cast<int>(s.contrasts.size());
    design->study_ids.push_back(s.id);
    design->study_offsets.push_back(row);
    for (int j = 0; j < pi; ++j) {
      const auto& c = s.contrasts[j];
      if (c.treatment != reference) design->x(row + j, column(c.treatment)) += 1.0;
      if (c.comparator != reference) design->x(row + j, column(c.comparator)) -= 1.0;
    }
    design->z.block(row, i * p, pi, p) = design->x.block(row, 0, pi, p);
    design->r.block(row, row, pi, pi) = s.within_cov;
    y.segment(row, pi) = s.estimates;
    row += pi;
  }
  design->study_offsets.push_back(row);

  if (n_rows <= p)
    throw Error(ErrorCode::rank_deficient, "need more contrasts (" + std::to_string(n_rows) +
                                               ") than treatment effects (" + std::to_string(p) + ")");
  Eigen::ColPivHouseholderQR<Matrix> qr(design->x);
  if (qr.rank() < p) throw Error(ErrorCode::rank_deficient, "contrast design matrix is rank deficient");

  for (const auto& dv : design->structure.derivatives()) {
    Matrix s = Matrix::Zero(n_rows, n_rows);
    for (int i = 0; i < n; ++i) {
      const int off = design->study_offsets[i];
      const int pi = design->study_offsets[i + 1] - off;
      const auto xi = design->x.block(off, 0, pi, p);
      s.block(off, off, pi, pi) = xi * dv * xi.transpose();
    }
    design->sigma_derivs.push_back(std::move(s));
  }
  return MarginalModel(std::move(design), std::move(y));
}

inline MarginalModel assemble(const std::vector<Study>& studies, const CovarianceStructure& structure,
                              const std::string& reference) {
  auto model = assemble(studies, structure.kind(), reference);
  if (model.p() != structure.dim())
    throw Error(ErrorCode::invalid_input, "covariance structure dimension does not match the network");
  return model;
}

/// Sigma(theta) = R + G(theta), validated.
inline Matrix sigma(const MarginalModel& model, const Vector& theta) {
  model.structure().check_size(theta);
  if (!model.structure().admissible(theta))
    throw Error(ErrorCode::inadmissible_theta, "theta outside the admissible region");
  Matrix s = model.sigma_unchecked(theta);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::not_positive_definite, "Sigma(theta) is not positive definite");
  return s;
}

// --- Arm-level conversion ----------------------------------------------------

struct Arm {
  std::string label;
  double events = 0;
  double total = 0;
};

struct ArmContrasts {
  std::vector<Contrast> contrasts;
  Vector estimates;
  Matrix within_cov;
  bool corrected = false;  // whether a continuity correction was applied anywhere
};

/// Log odds ratios of arms[1..] against arms[0] in the given log base. A table
/// with a zero cell gets `correction` added to all four cells. Contrasts sharing
/// the comparator get covariance s_1 s_2 / 2.
inline ArmContrasts within_cov_from_arms(const std::vector<Arm>& arms, double correction,
                                         double log_base = 10.0) {
  if (arms.size() < 2) throw Error(ErrorCode::invalid_input, "need at least two arms");
  if (correction < 0.0) throw Error(ErrorCode::invalid_input, "continuity correction must be >= 0");
  if (!(log_base > 0.0) || log_base == 1.0) throw Error(ErrorCode::invalid_input, "invalid log base");
  for (const auto& a : arms)
    if (a.total < 1 || a.events < 0 || a.events > a.total)
      throw Error(ErrorCode::invalid_input, "arm '" + a.label + "': need 0 <= events <= total, total >= 1");

  const auto k = static_cast<int>(arms.size()) - 1;
  const double lnb = std::log(log_base);
  ArmContrasts out{{}, Vector(k), Matrix::Zero(k, k), false};
  Vector se(k);
  const auto& ctl = arms[0];
  for (int j = 0; j < k; ++j) {
    const auto& trt = arms[j + 1];
    double a = trt.events, b = trt.total - trt.events;
    double c = ctl.events, d = ctl.total - ctl.events;
    if (a == 0 || b == 0 || c == 0 || d == 0) {
      if (correction == 0.0)
        throw Error(ErrorCode::invalid_input,
                    "zero cell in " + trt.label + " vs " + ctl.label + " with no continuity correction");
      a += correction;
      b += correction;
      c += correction;
      d += correction;
      out.corrected = true;
    }
    out.contrasts.push_back({trt.label, ctl.label});
    out.estimates[j] = std::log((a / b) / (c / d)) / lnb;
    const double var = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d) / (lnb * lnb);
    out.within_cov(j, j) = var;
    se[j] = std::sqrt(var);
  }
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j) out.within_cov(i, j) = se[i] * se[j] / 2.0;
  return out;
}

inline Study study_from_arms(const std::string& id, const std::vector<Arm>& arms, double correction,
                             double log_base = 10.0) {
  auto ac = within_cov_from_arms(arms, correction, log_base);
  return Study{id, std::move(ac.contrasts), std::move(ac.estimates), std::move(ac.within_cov)};
}

}  // namespace nmaci
