#include <gtest/gtest.h>

#include <random>

#include "fpqr/qr.hpp"

using namespace fpqr;

namespace {

struct Instance {
  Matrix x;
  Vector y;
};

Instance random_instance(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p) {
  std::normal_distribution<double> nd;
  std::student_t_distribution<double> heavy(3.0);
  Instance inst{Matrix(n, p), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    double signal = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      inst.x(i, j) = nd(rng);
      signal += (0.5 + j) * inst.x(i, j);
    }
    inst.y(i) = signal + heavy(rng);
  }
  return inst;
}

// Counts residuals strictly below / at-or-below zero, with a numerical zero band.
std::pair<int, int> sign_counts(const Vector& r, double tol) {
  int neg = 0, nonpos = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (r(i) < -tol) ++neg;
    if (r(i) <= tol) ++nonpos;
  }
  return {neg, nonpos};
}

Vector residuals(const Instance& inst, const QrSolution& s) {
  return inst.y - inst.x * s.slopes - Vector::Constant(inst.y.size(), s.intercept);
}

}  // namespace

TEST(CheckLoss, Values) {
  EXPECT_EQ(check_loss(0.0, 0.3), 0.0);
  EXPECT_EQ(check_loss(0.0, 0.9), 0.0);
  EXPECT_NEAR(check_loss(2.0, 0.3), 0.6, 1e-15);
  EXPECT_NEAR(check_loss(-2.0, 0.3), 1.4, 1e-15);
  for (double u : {-3.0, -1.0, 4.0}) EXPECT_NEAR(check_loss(u, 0.5), 0.5 * std::abs(u), 1e-15);
}

TEST(CheckLoss, ConvexAndNonNegative) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-10.0, 10.0), unit(0.0, 1.0), taus(0.01, 0.99);
  for (int trial = 0; trial < 5000; ++trial) {
    const double a = u(rng), b = u(rng), lam = unit(rng), tau = taus(rng);
    const double lhs = check_loss(lam * a + (1 - lam) * b, tau);
    const double rhs = lam * check_loss(a, tau) + (1 - lam) * check_loss(b, tau);
    EXPECT_LE(lhs, rhs + 1e-12);
    EXPECT_GE(check_loss(a, tau), 0.0);
  }
}

TEST(SolveQr, InterceptOnlyMedian) {
  const Matrix x(5, 0);
  Vector y(5);
  y << 1, 2, 3, 4, 5;
  const auto s = solve_qr(x, y, 0.5, true);
  EXPECT_NEAR(s.intercept, 3.0, 1e-12);
  EXPECT_NEAR(s.objective, 3.0, 1e-12);
  EXPECT_TRUE(s.converged);
}

TEST(SolveQr, ThreePointLine) {
  Matrix x(3, 1);
  x << 0, 1, 2;
  Vector y(3);
  y << 1, 2, 4;
  // Hand enumeration of the three pairwise lines: objectives 0.5, 0.25, 0.5.
  const auto s = solve_qr(x, y, 0.5, true);
  EXPECT_NEAR(s.intercept, 1.0, 1e-12);
  EXPECT_NEAR(s.slopes(0), 1.5, 1e-12);
  EXPECT_NEAR(s.objective, 0.25, 1e-12);
  const auto o = qr_oracle(x, y, 0.5);
  EXPECT_NEAR(o.objective, 0.25, 1e-15);
}

TEST(SolveQr, PositiveHomogeneity) {
  std::mt19937_64 rng(5);
  const auto inst = random_instance(rng, 40, 2);
  const auto base = solve_qr(inst.x, inst.y, 0.3);
  const auto scaled = solve_qr(inst.x, Vector(2.5 * inst.y), 0.3);
  EXPECT_NEAR(scaled.intercept, 2.5 * base.intercept, 1e-8);
  EXPECT_LT((scaled.slopes - 2.5 * base.slopes).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(scaled.objective, 2.5 * base.objective, 1e-8);
}

TEST(SolveQr, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(20240601);
  const double taus[] = {0.1, 0.25, 0.5, 0.9};
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index p = 1 + trial % 3;
    const Eigen::Index n = p == 1 ? 45 : (p == 2 ? 30 : 20);
    const auto inst = random_instance(rng, n, p);
    const double tau = taus[trial % 4];
    const auto s = solve_qr(inst.x, inst.y, tau);
    const auto o = qr_oracle(inst.x, inst.y, tau);
    EXPECT_LE(s.objective - o.objective, 1e-6 * (1.0 + o.objective)) << "trial " << trial;
    EXPECT_LE(o.objective, s.objective + 1e-6);
    const auto [neg, nonpos] = sign_counts(residuals(inst, s), 1e-9);
    EXPECT_LE(neg, tau * n + 1e-9);
    EXPECT_GE(nonpos, tau * n - 1e-9);
  }
}

TEST(SolveQr, DiagonalReparameterization) {
  std::mt19937_64 rng(99);
  const auto inst = random_instance(rng, 50, 3);
  Vector d(3);
  d << 0.5, 2.0, 7.0;
  const auto base = solve_qr(inst.x, inst.y, 0.25);
  const auto scaled = solve_qr(inst.x * d.asDiagonal(), inst.y, 0.25);
  EXPECT_LT((scaled.slopes - base.slopes.cwiseQuotient(d)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(scaled.objective, base.objective, 1e-8);
}

TEST(SolveQr, LargerDesignsReachOptimality) {
  std::mt19937_64 rng(17);
  const auto inst = random_instance(rng, 150, 25);
  for (double tau : {0.1, 0.5, 0.75}) {
    const auto s = solve_qr(inst.x, inst.y, tau);
    EXPECT_TRUE(s.converged);
    const auto [neg, nonpos] = sign_counts(residuals(inst, s), 1e-9);
    EXPECT_LE(neg, tau * 150 + 1e-9);
    EXPECT_GE(nonpos, tau * 150 - 1e-9);
  }
}

TEST(SolveQr, ErrorPaths) {
  Matrix x(6, 2);
  x.col(0) << 1, 2, 3, 4, 5, 6;
  x.col(1) = 2.0 * x.col(0);
  const Vector y = Vector::LinSpaced(6, 0.0, 1.0);
  EXPECT_THROW(solve_qr(x, y, 0.5), ConditioningError);
  EXPECT_THROW(solve_qr(x.leftCols(1), y.head(5), 0.5), ShapeError);
  EXPECT_THROW(solve_qr(x.leftCols(1), y, 1.0), DomainError);
  EXPECT_THROW(solve_qr(Matrix(1, 1), Vector::Ones(1), 0.5), ConditioningError);
}

TEST(QrOracle, NegationSymmetryAtMedian) {
  std::mt19937_64 rng(2);
  const auto inst = random_instance(rng, 25, 2);
  const auto a = qr_oracle(inst.x, inst.y, 0.5);
  const auto b = qr_oracle(inst.x, Vector(-inst.y), 0.5);
  EXPECT_NEAR(a.objective, b.objective, 1e-12);
  EXPECT_NEAR(a.intercept, -b.intercept, 1e-10);
  EXPECT_LT((a.slopes + b.slopes).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(QrOracle, RejectsLargeInstances) {
  EXPECT_THROW(qr_oracle(Matrix::Zero(201, 1), Vector::Zero(201), 0.5), SizeError);
  EXPECT_THROW(qr_oracle(Matrix::Zero(20, 7), Vector::Zero(20), 0.5), SizeError);
}

TEST(QuantileCovariance, NoiseFreeSlope) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Vector z(80);
  for (auto& v : z) v = nd(rng);
  z = ((z.array() - z.mean()) / std::sqrt((z.array() - z.mean()).square().sum() / 79.0)).matrix();
  const Vector y = 3.0 * z;
  for (double tau : {0.2, 0.5, 0.8}) EXPECT_NEAR(quantile_covariance(y, z, tau), 3.0, 1e-9);
}

TEST(QuantileCovariance, IndependentIsNearZero) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Vector z(500), y(500);
  for (Eigen::Index i = 0; i < 500; ++i) {
    z(i) = nd(rng);
    y(i) = nd(rng);
  }
  z = ((z.array() - z.mean()) / std::sqrt((z.array() - z.mean()).square().sum() / 499.0)).matrix();
  const double qc = quantile_covariance(y, z, 0.5);
  EXPECT_LT(std::abs(qc), 0.15);
  // Same value from the exhaustive solver (p = 1 keeps enumeration cheap).
  const auto o = qr_oracle(Matrix(z.head(200)), Vector(y.head(200)), 0.5);
  const auto s = solve_qr(Matrix(z.head(200)), Vector(y.head(200)), 0.5);
  EXPECT_NEAR(s.objective, o.objective, 1e-9);
}

TEST(QuantileCovariance, ConstantPredictorIsDegenerate) {
  EXPECT_THROW(quantile_covariance(Vector::LinSpaced(10, 0, 1), Vector::Ones(10), 0.5), DegenerateError);
}

TEST(QuantileCovMatrix, IdentityDirectionsWhenResponseEqualsPredictors) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  Matrix z(60, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  for (Eigen::Index j = 0; j < 3; ++j) {
    Vector c = z.col(j);
    c = ((c.array() - c.mean()) / std::sqrt((c.array() - c.mean()).square().sum() / 59.0)).matrix();
    z.col(j) = c;
  }
  const auto d = quantile_cov_matrix(z, z, 0.5);
  for (Eigen::Index k = 0; k < 3; ++k) {
    EXPECT_NEAR(d.c.col(k).norm(), 1.0, 1e-10);
    // Diagonal dominates: own column has slope one, the others are small.
    EXPECT_GT(std::abs(d.c(k, k)), 0.8);
  }
}

TEST(QuantileCovMatrix, SingleResponseMatchesDirectionVector) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  Matrix z(200, 4);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  Vector y = z.col(0) - 0.5 * z.col(2);
  for (auto& v : y) v += nd(rng);
  const auto d = quantile_cov_matrix(Matrix(y), z, 0.5);
  Vector manual(4);
  for (Eigen::Index j = 0; j < 4; ++j) manual(j) = quantile_covariance(y, z.col(j), 0.5);
  manual.normalize();
  EXPECT_LT((d.c.col(0) - manual).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(d.c.col(0).norm(), 1.0, 1e-10);
}

TEST(QuantileCovMatrix, ZeroResponseColumnIsFlagged) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> nd;
  Matrix z(50, 3), omega(50, 2);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  omega.col(0) = z.col(1);
  omega.col(1).setZero();
  const auto d = quantile_cov_matrix(omega, z, 0.5);
  EXPECT_FALSE(d.degenerate[0]);
  EXPECT_TRUE(d.degenerate[1]);
  EXPECT_EQ(d.c.col(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(d.all_degenerate());
}
