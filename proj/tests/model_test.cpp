#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace nmaci;
using namespace nmaci::testing;

namespace {

TEST(Assemble, ThreeStudyExampleDesign) {
  const auto m = assemble(three_study_example(), StructureKind::compound_symmetry, "P");
  Matrix expected(4, 2);
  expected << 1, 0, 0, 1, 1, 0, 0, 1;
  EXPECT_EQ(m.n_obs(), 4);
  EXPECT_EQ(m.p(), 2);
  EXPECT_EQ(m.n_studies(), 3);
  EXPECT_EQ(m.x(), expected);
  EXPECT_EQ(m.labels(), (std::vector<std::string>{"A", "B"}));
  // Z is block-diagonal in the per-study design blocks.
  EXPECT_EQ(m.z().rows(), 4);
  EXPECT_EQ(m.z().cols(), 6);
}

TEST(Assemble, SingleContrast) {
  const std::vector<Study> s{{"one", {{"A", "P"}}, Vector::Constant(1, 0.5), Matrix::Constant(1, 1, 1.0)}};
  // A single observation cannot identify a mean and a variance: N > p fails.
  EXPECT_THROW(assemble(s, StructureKind::compound_symmetry, "P"), Error);
  auto two = s;
  two.push_back({"two", {{"A", "P"}}, Vector::Constant(1, 0.7), Matrix::Constant(1, 1, 1.0)});
  const auto m = assemble(two, StructureKind::compound_symmetry, "P");
  EXPECT_DOUBLE_EQ(m.y()[0], 0.5);
  EXPECT_DOUBLE_EQ(m.x()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.r()(0, 0), 1.0);
}

TEST(Assemble, SimulationOneDesignRows) {
  const auto spec = scenarios::simulation1(10);
  const auto studies = generate_dataset(spec, 3);
  const auto m = assemble(studies, StructureKind::compound_symmetry, "P");
  EXPECT_EQ(m.n_obs(), 10);
  EXPECT_EQ(m.p(), 3);
  // Rows 7 and 8 are the two A vs B studies.
  for (int row : {7, 8}) {
    EXPECT_DOUBLE_EQ(m.x()(row, 0), 1.0);
    EXPECT_DOUBLE_EQ(m.x()(row, 1), -1.0);
    EXPECT_DOUBLE_EQ(m.x()(row, 2), 0.0);
  }
  // Rank by elimination on the distinct rows (1,0,0), (0,1,0), (0,0,1).
  Eigen::FullPivLU<Matrix> lu(m.x());
  EXPECT_EQ(lu.rank(), 3);
}

TEST(Assemble, Errors) {
  auto dup = three_study_example();
  dup[1].id = "s1";
  try {
    assemble(dup, StructureKind::compound_symmetry, "P");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_study);
  }

  auto disconnected = diagonal_studies({1, 2, 3});
  disconnected.push_back({"x1", {{"C", "D"}}, Vector::Constant(1, 0.1), Matrix::Zero(1, 1)});
  disconnected.push_back({"x2", {{"C", "D"}}, Vector::Constant(1, 0.2), Matrix::Zero(1, 1)});
  try {
    assemble(disconnected, StructureKind::diagonal_homogeneous, "P");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::disconnected_network);
  }

  auto asym = three_study_example();
  asym[0].within_cov(0, 1) += 0.01;
  try {
    assemble(asym, StructureKind::compound_symmetry, "P");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_covariance);
  }

  auto indefinite = three_study_example();
  indefinite[1].within_cov(0, 0) = -0.1;
  EXPECT_THROW(assemble(indefinite, StructureKind::compound_symmetry, "P"), Error);

  EXPECT_THROW(assemble(three_study_example(), StructureKind::compound_symmetry, "Z"), Error);

  auto self = three_study_example();
  self[2].contrasts[0].comparator = "B";
  EXPECT_THROW(assemble(self, StructureKind::compound_symmetry, "P"), Error);

  auto dims = three_study_example();
  dims[0].estimates = Vector::Zero(3);
  EXPECT_THROW(assemble(dims, StructureKind::compound_symmetry, "P"), Error);
}

TEST(Sigma, DiagonalHomogeneousIsScaledIdentity) {
  const auto m = assemble(diagonal_studies({0.1, 0.2, 0.3}), StructureKind::diagonal_homogeneous, "P");
  EXPECT_TRUE(sigma(m, Vector::Constant(1, 2.0)).isApprox(2.0 * Matrix::Identity(3, 3)));
}

TEST(Sigma, ThreeStudyExampleUnstructured) {
  const auto studies = three_study_example();
  const auto m = assemble(studies, StructureKind::unstructured, "P");
  ASSERT_EQ(m.q(), 3);
  const Vector theta = (Vector(3) << 0.4, 0.5, 0.1).finished();
  const Matrix s = sigma(m, theta);
  Matrix v(2, 2);
  v << 0.4, 0.1, 0.1, 0.5;
  EXPECT_TRUE(s.block(0, 0, 2, 2).isApprox(studies[0].within_cov + v));
  EXPECT_DOUBLE_EQ(s(2, 2), studies[1].within_cov(0, 0) + 0.4);
  EXPECT_DOUBLE_EQ(s(3, 3), studies[2].within_cov(0, 0) + 0.5);
  EXPECT_DOUBLE_EQ(s(0, 2), 0.0);
}

TEST(Sigma, CompoundSymmetryBetweenTreatmentRow) {
  const CovarianceStructure cs(StructureKind::compound_symmetry, 3);
  const Vector x = (Vector(3) << 1, -1, 0).finished();
  EXPECT_NEAR(x.dot(cs.v(Vector::Constant(1, 0.3)) * x), 0.3, 1e-15);
}

TEST(Sigma, InadmissibleTheta) {
  const auto m = diagonal_model();
  try {
    sigma(m, Vector::Constant(1, -1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::inadmissible_theta);
  }
  EXPECT_THROW(sigma(m, Vector::Constant(2, 1.0)), Error);
  // Admissible but singular: R = 0 and theta = 0.
  try {
    sigma(m, Vector::Constant(1, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_positive_definite);
  }
}

TEST(Structure, ParameterCounts) {
  EXPECT_EQ(CovarianceStructure(StructureKind::compound_symmetry, 4).parameter_count(), 1);
  EXPECT_EQ(CovarianceStructure(StructureKind::diagonal_homogeneous, 4).parameter_count(), 1);
  EXPECT_EQ(CovarianceStructure(StructureKind::diagonal, 4).parameter_count(), 4);
  EXPECT_EQ(CovarianceStructure(StructureKind::unstructured, 4).parameter_count(), 10);
  const CovarianceStructure un(StructureKind::unstructured, 3);
  EXPECT_EQ(un.position(3), std::make_pair(0, 1));
  EXPECT_EQ(un.position(4), std::make_pair(0, 2));
  EXPECT_EQ(un.position(5), std::make_pair(1, 2));
  EXPECT_FALSE(un.admissible((Vector(6) << 1, 1, 1, 2, 0, 0).finished()));
}

TEST(Arms, IdenticalArmsGiveZero) {
  const auto ac = within_cov_from_arms({{"P", 30, 100}, {"A", 30, 100}}, 0.5);
  EXPECT_DOUBLE_EQ(ac.estimates[0], 0.0);
  EXPECT_FALSE(ac.corrected);
}

TEST(Arms, VarianceWithoutCorrection) {
  const auto ac = within_cov_from_arms({{"P", 5, 20}, {"A", 10, 20}}, 0.0);
  const double ln10 = std::log(10.0);
  EXPECT_NEAR(ac.within_cov(0, 0), (1.0 / 10 + 1.0 / 10 + 1.0 / 5 + 1.0 / 15) / (ln10 * ln10), 1e-15);
  EXPECT_NEAR(ac.estimates[0], std::log10((10.0 / 10.0) / (5.0 / 15.0)), 1e-15);
  EXPECT_EQ(ac.contrasts[0], (Contrast{"A", "P"}));
}

TEST(Arms, NullValueOfTreatmentB) {
  // p = 0.65 against p = 0.6: odds ratio 1.238, log10 0.093.
  const auto ac = within_cov_from_arms({{"P", 600, 1000}, {"B", 650, 1000}}, 0.5);
  EXPECT_NEAR(std::pow(10.0, ac.estimates[0]), 1.238, 5e-4);
  EXPECT_NEAR(ac.estimates[0], 0.093, 5e-4);
}

TEST(Arms, ZeroCellCorrection) {
  const auto ac = within_cov_from_arms({{"P", 0, 10}, {"A", 3, 10}}, 0.5);
  EXPECT_TRUE(ac.corrected);
  EXPECT_NEAR(ac.estimates[0], std::log10((3.5 / 7.5) / (0.5 / 10.5)), 1e-14);
  EXPECT_THROW(within_cov_from_arms({{"P", 0, 10}, {"A", 3, 10}}, 0.0), Error);
}

TEST(Arms, SharedComparatorCovariance) {
  const auto ac = within_cov_from_arms({{"P", 5, 40}, {"A", 9, 40}, {"B", 12, 40}}, 0.5);
  ASSERT_EQ(ac.within_cov.rows(), 2);
  EXPECT_NEAR(ac.within_cov(0, 1), std::sqrt(ac.within_cov(0, 0) * ac.within_cov(1, 1)) / 2, 1e-15);
}

TEST(Arms, NaturalLogBase) {
  const auto e = within_cov_from_arms({{"P", 5, 20}, {"A", 10, 20}}, 0.0, std::exp(1.0));
  const auto t = within_cov_from_arms({{"P", 5, 20}, {"A", 10, 20}}, 0.0, 10.0);
  EXPECT_NEAR(e.estimates[0], t.estimates[0] * std::log(10.0), 1e-14);
}

TEST(NullSpecTest, Selector) {
  const auto n = NullSpec::select(3, 1, 0.25);
  EXPECT_EQ(n.index(), 1);
  EXPECT_DOUBLE_EQ(n.value(), 0.25);
  NullSpec bad{Vector::Ones(3), Vector::Zero(3)};
  EXPECT_THROW(bad.validate(3), Error);
  EXPECT_THROW(NullSpec::select(3, 3, 0.0), Error);
}

TEST(ModelProperties, RandomInstances) {
  std::mt19937_64 rng(101);
  for (int k = 0; k < 200; ++k) {
    const auto inst = random_instance(rng, true);
    const auto& m = inst.model;
    int n = 0;
    for (const auto& s : inst.studies) n += static_cast<int>(s.contrasts.size());
    ASSERT_EQ(m.n_obs(), n);
    ASSERT_EQ(Eigen::FullPivLU<Matrix>(m.x()).rank(), m.p());
    const Vector theta = random_theta(m.structure(), rng);
    const Matrix s = sigma(m, theta);
    ASSERT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Matrix g = s - m.r();
    Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
    ASSERT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(ModelProperties, CompoundSymmetryContrastVariance) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int d = 2; d <= 5; ++d) {
    const CovarianceStructure cs(StructureKind::compound_symmetry, d);
    for (int k = 0; k < 20; ++k) {
      const double theta = u(rng);
      for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) {
          Vector x = Vector::Zero(d);
          x[a] = 1;
          x[b] = -1;
          ASSERT_NEAR(x.dot(cs.v(Vector::Constant(1, theta)) * x), theta, 1e-14);
        }
    }
  }
}

TEST(ModelProperties, PermutationEquivariance) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 50; ++k) {
    const auto inst = random_instance(rng);
    auto perm = inst.studies;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = inst.model;
    const auto b = assemble(perm, inst.structure, "P");
    ASSERT_EQ(a.labels(), b.labels());
    const Vector theta = random_theta(a.structure(), rng);
    const Matrix sa = sigma(a, theta), sb = sigma(b, theta);
    // Map each permuted study's rows back to the original ordering.
    for (int sb_idx = 0; sb_idx < b.n_studies(); ++sb_idx) {
      const auto& id = b.study_ids()[sb_idx];
      const int sa_idx = static_cast<int>(std::find(a.study_ids().begin(), a.study_ids().end(), id) -
                                          a.study_ids().begin());
      const int ra = a.study_offsets()[sa_idx], rb = b.study_offsets()[sb_idx];
      const int len = b.study_offsets()[sb_idx + 1] - rb;
      ASSERT_EQ(a.y().segment(ra, len), b.y().segment(rb, len));
      ASSERT_EQ(a.x().middleRows(ra, len), b.x().middleRows(rb, len));
      ASSERT_EQ(Matrix(sa.block(ra, ra, len, len)), Matrix(sb.block(rb, rb, len, len)));
    }
  }
}

}  // namespace
