#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace lbast::test {

using Matrix = Eigen::MatrixXd;

/// Random subgenerator: nonnegative off-diagonal rates, every row leaking
/// a positive exit rate.
inline Matrix random_subgenerator(int n, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  Matrix F = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      F(i, j) = u(rng);
      row += F(i, j);
    }
    F(i, i) = -(row + 0.1 + u(rng));
  }
  return F;
}

inline Matrix random_stochastic(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix P(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) P(i, j) = u(rng);
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

/// exp(M) by a 200-term Taylor series after scaling by 2^-s, then squaring.
inline Matrix taylor_expm(const Matrix& M) {
  const double norm = M.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (norm / std::ldexp(1.0, s) > 0.5) ++s;
  const Matrix X = M / std::ldexp(1.0, s);
  Matrix term = Matrix::Identity(M.rows(), M.cols());
  Matrix sum = term;
  for (int n = 1; n < 200; ++n) {
    term = term * X / n;
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

/// Stationary vector by a direct least-squares solve of [I - P^T; 1^T] v = e.
inline Eigen::RowVectorXd linear_stationary(const Matrix& P) {
  const auto n = P.rows();
  Matrix M(n + 1, n);
  M.topRows(n) = Matrix::Identity(n, n) - P.transpose();
  M.row(n).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
  rhs[n] = 1.0;
  return M.colPivHouseholderQr().solve(rhs).transpose();
}

}  // namespace lbast::test
