#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fpqr/basis.hpp"

using namespace fpqr;

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Composite Simpson rule applied span by span; independent of the Gauss
// rule used in the library.
Matrix simpson_gram(const BasisSystem& b, int panels_per_span) {
  const int k = b.n_basis();
  Matrix g = Matrix::Zero(k, k);
  const auto& knots = b.knots();
  for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
    const double a = knots[s], c = knots[s + 1];
    if (!(c > a)) continue;
    const int m = 2 * panels_per_span;
    const double h = (c - a) / m;
    for (int q = 0; q <= m; ++q) {
      const double w = (q == 0 || q == m) ? 1.0 : (q % 2 ? 4.0 : 2.0);
      const Vector v = b.evaluate(a + q * h);
      g += (w * h / 3.0) * v * v.transpose();
    }
  }
  return g;
}

}  // namespace

TEST(Basis, BernsteinGramMatchesClosedForm) {
  const auto b = build_bspline_basis({0.0, 1.0}, 4, 4);
  EXPECT_NEAR(b.gram()(0, 0), 1.0 / 7.0, 1e-14);
  // int B_i B_j = C(3,i) C(3,j) / (7 C(6, i+j)) for degree-3 Bernstein polynomials.
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double expected = binomial(3, i) * binomial(3, j) / (7.0 * binomial(6, i + j));
      EXPECT_NEAR(b.gram()(i, j), expected, 1e-14) << i << "," << j;
    }
  }
}

TEST(Basis, GramMatchesIndependentQuadrature) {
  for (int order : {2, 3, 4, 5}) {
    const auto b = build_bspline_basis({-1.0, 2.0}, 12, order);
    const Matrix ref = simpson_gram(b, 1024);
    EXPECT_LT((b.gram() - ref).cwiseAbs().maxCoeff(), 1e-10) << "order " << order;
    EXPECT_EQ(b.gram(), b.gram().transpose());
  }
}

TEST(Basis, GramIsPositiveDefinite) {
  const auto b = build_bspline_basis({0.0, 1.0}, 16, 4);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b.gram());
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Basis, HalfPowerIdentities) {
  for (int k : {4, 10, 16, 25}) {
    const auto b = build_bspline_basis({0.0, 1.0}, k, 4);
    const Matrix& h = b.gram_half();
    const Matrix& hi = b.gram_half_inv();
    const Matrix id = Matrix::Identity(k, k);
    EXPECT_LT((h * h.transpose() - b.gram()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((hi * h - id).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((hi * b.gram() * hi.transpose() - id).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(h, h.transpose());
  }
}

TEST(Basis, PartitionOfUnity) {
  const auto b = build_bspline_basis({0.0, 1.0}, 10, 4);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vector v = b.evaluate(u(rng));
    EXPECT_NEAR(v.sum(), 1.0, 1e-12);
    EXPECT_GE(v.minCoeff(), 0.0);
    EXPECT_LE(v.maxCoeff(), 1.0);
  }
  EXPECT_NEAR(b.evaluate(1.0).sum(), 1.0, 1e-12);
}

TEST(Basis, EndpointRows) {
  const auto b = build_bspline_basis({0.0, 1.0}, 8, 4);
  const Vector left = b.evaluate(0.0);
  EXPECT_DOUBLE_EQ(left(0), 1.0);
  EXPECT_DOUBLE_EQ(left.tail(7).cwiseAbs().sum(), 0.0);
  const Vector right = b.evaluate(1.0);
  EXPECT_DOUBLE_EQ(right(7), 1.0);
}

TEST(Basis, LinearHandEvaluation) {
  const auto b = build_bspline_basis({0.0, 1.0}, 2, 2);
  const std::vector<double> pts{0.25};
  const Matrix e = eval_basis(b, pts);
  EXPECT_NEAR(e(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(e(0, 1), 0.25, 1e-15);
}

TEST(Basis, RejectsBadParameters) {
  EXPECT_THROW(build_bspline_basis({0.0, 1.0}, 3, 4), DomainError);
  EXPECT_THROW(build_bspline_basis({0.0, 1.0}, 4, 1), DomainError);
  EXPECT_THROW(build_bspline_basis({1.0, 1.0}, 6, 4), DomainError);
  EXPECT_THROW(build_bspline_basis({2.0, 1.0}, 6, 4), DomainError);
  const auto b = build_bspline_basis({0.0, 1.0}, 6, 4);
  const std::vector<double> outside{1.5};
  EXPECT_THROW(eval_basis(b, outside), DomainError);
  EXPECT_THROW(Grid({0.0, 0.5, 0.4, 1.0}), DomainError);
  EXPECT_THROW(Grid({0.0, 0.5, 1.0}), DomainError);
}

TEST(Basis, FitRecoversBasisFunction) {
  const auto b = build_bspline_basis({0.0, 1.0}, 10, 4);
  const Grid grid = Grid::uniform({0.0, 1.0}, 50);
  const Matrix e = eval_basis(b, grid);
  const FunctionalSample sample(grid, e.col(3).transpose());
  const CoefBlock block = fit_coefficients(sample, b);
  Vector unit = Vector::Zero(10);
  unit(3) = 1.0;
  EXPECT_LT((block.coefs.row(0).transpose() - unit).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Basis, FitReproducesConstantsAndSpanElements) {
  const auto b = build_bspline_basis({0.0, 1.0}, 10, 4);
  const Grid grid = Grid::uniform({0.0, 1.0}, 40);
  const Matrix e = eval_basis(b, grid);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix values(3, 40);
  values.row(0).setConstant(5.0);
  Vector c1(10), c2(10);
  for (int k = 0; k < 10; ++k) {
    c1(k) = nd(rng);
    c2(k) = nd(rng);
  }
  values.row(1) = (e * c1).transpose();
  values.row(2) = (e * c2).transpose();
  const CoefBlock block = fit_coefficients(FunctionalSample(grid, values), b);
  const Matrix fitted = block.coefs * e.transpose();
  EXPECT_LT((fitted - values).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((block.coefs.row(1).transpose() - c1).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Basis, FitSineAccuracyAndOrthogonalResidual) {
  const auto b = build_bspline_basis({0.0, 1.0}, 10, 4);
  const Grid grid = Grid::uniform({0.0, 1.0}, 100);
  Matrix values(1, 100);
  for (int l = 0; l < 100; ++l) values(0, l) = std::sin(2.0 * std::numbers::pi * grid[l]);
  const CoefBlock block = fit_coefficients(FunctionalSample(grid, values), b);
  const Matrix e = eval_basis(b, grid);
  const Vector resid = values.row(0).transpose() - e * block.coefs.row(0).transpose();
  // Best cubic fit with 7 uniform spans: max error 1.0846e-3, RMS 5.59e-4.
  EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1.1e-3);
  EXPECT_LT(std::sqrt(resid.squaredNorm() / 100.0), 1e-3);
  EXPECT_LT((e.transpose() * resid).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Basis, FitRejectsTooFewPoints) {
  const auto b = build_bspline_basis({0.0, 1.0}, 10, 4);
  const Grid grid = Grid::uniform({0.0, 1.0}, 8);
  EXPECT_THROW(fit_coefficients(FunctionalSample(grid, Matrix::Zero(2, 8)), b), ConditioningError);
  // Enough points, but all inside one knot span: rank deficient.
  const Grid clustered({0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1, 0.11});
  EXPECT_THROW(fit_coefficients(FunctionalSample(clustered, Matrix::Zero(1, 12)), b), ConditioningError);
}

TEST(Basis, BlockDiagonalComposite) {
  const auto b = build_bspline_basis({0.0, 1.0}, 6, 4);
  const CompositeBasis single = block_diagonal_gram({b});
  EXPECT_EQ(single.gram(), b.gram());
  EXPECT_EQ(single.gram_half(), b.gram_half());
  EXPECT_EQ(single.gram_half_inv(), b.gram_half_inv());

  const CompositeBasis twin = block_diagonal_gram({b, b});
  ASSERT_EQ(twin.total_basis(), 12);
  EXPECT_EQ(Matrix(twin.gram().topLeftCorner(6, 6)), b.gram());
  EXPECT_EQ(Matrix(twin.gram().bottomRightCorner(6, 6)), b.gram());
  EXPECT_EQ(twin.gram().topRightCorner(6, 6).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(twin.gram().bottomLeftCorner(6, 6).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((twin.gram_half() * twin.gram_half().transpose() - twin.gram()).cwiseAbs().maxCoeff(), 1e-10);

  const auto other = build_bspline_basis({0.0, 2.0}, 9, 3);
  const CompositeBasis mixed = block_diagonal_gram({other, b});
  EXPECT_EQ(mixed.offset(1), 9);
  EXPECT_EQ(Matrix(mixed.gram().topLeftCorner(9, 9)), other.gram());
  EXPECT_THROW(block_diagonal_gram({}), ShapeError);
}

TEST(Basis, TrapezoidWeightsIntegrateLinearExactly) {
  const Grid grid({0.0, 0.1, 0.35, 0.6, 1.0});
  const Vector w = trapezoid_weights(grid.points());
  EXPECT_NEAR(w.sum(), 1.0, 1e-15);
  double integral = 0.0;
  for (std::size_t l = 0; l < grid.size(); ++l) integral += w(static_cast<Eigen::Index>(l)) * (3.0 * grid[l] + 1.0);
  EXPECT_NEAR(integral, 2.5, 1e-14);
}
