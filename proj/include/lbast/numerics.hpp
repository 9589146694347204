#pragma once

// Dense kernels for subgenerators and stochastic matrices.
//
// Matrix exponentials are computed by uniformization: for a subgenerator F
// with q >= max|F_ii| the matrix P = I + F/q is nonnegative and
// substochastic, and e^{Ft} = sum_n Poisson(n; qt) P^n. Every partial sum is
// nonnegative, which keeps results in [0,1] regardless of stiffness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lbast/error.hpp"

namespace lbast::numerics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kPoissonTail = 1e-14;
// Largest q*t handled in a single uniformization step; longer horizons are
// split so that e^{-qt} never underflows and truncation stays relative.
inline constexpr double kMaxStepMass = 30.0;
inline constexpr std::size_t kDirectSolveLimit = 2000;

inline bool is_subgenerator(const Matrix& F, double tol = 1e-12) {
  if (F.rows() != F.cols()) return false;
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < F.cols(); ++j) {
      if (i != j && F(i, j) < -tol) return false;
      row += F(i, j);
    }
    if (row > tol) return false;
  }
  return true;
}

inline bool is_stochastic(const Matrix& P, double tol = 1e-12) {
  if (P.rows() != P.cols()) return false;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      if (P(i, j) < -tol) return false;
      row += P(i, j);
    }
    if (std::abs(row - 1.0) > tol) return false;
  }
  return true;
}

/// Uniformization rate for F: the largest absolute diagonal entry.
inline double uniformization_rate(const Matrix& F) {
  return F.rows() == 0 ? 0.0 : (-F.diagonal()).maxCoeff();
}

/// Poisson(mean) probabilities for n = 0..N, where N is the first index at
/// which the remaining tail mass drops below `eps`. Requires mean <= ~700.
inline std::vector<double> poisson_weights(double mean, double eps = kPoissonTail) {
  std::vector<double> w;
  double term = std::exp(-mean);
  double cumulative = term;
  w.push_back(term);
  for (int n = 1; 1.0 - cumulative >= eps; ++n) {
    term *= mean / n;
    cumulative += term;
    w.push_back(term);
    // Rounding can leave the cumulative sum a few ulps short of 1.
    if (n > mean && term < eps * 1e-3) break;
  }
  return w;
}

/// Result of propagating a value through e^{Ft} together with the time
/// integral of the trajectory over [0, t].
template <class Value>
struct Propagated {
  Value value;
  Value integral;
};

/// Computes x -> x e^{Ft} (or e^{Ft} x) for a subgenerator given only its
/// action through `step(in, out)`, which must write out = in * P (or P * in)
/// with P = I + F / rate. When `with_integral` is set, also accumulates
/// int_0^t x e^{Fs} ds using the identity
///   int_0^t e^{Fs} ds = (1/q) sum_n P^n Pr{Poisson(qt) > n}.
template <class Value, class Step>
Propagated<Value> propagate(const Value& x, double rate, double t, Step&& step,
                            bool with_integral = false) {
  Propagated<Value> out{x, Value()};
  if (with_integral) out.integral = Value::Zero(x.rows(), x.cols());
  if (t <= 0.0) return out;
  if (rate <= 0.0) {
    if (with_integral) out.integral = x * t;
    return out;
  }
  const int steps = std::max(1, static_cast<int>(std::ceil(rate * t / kMaxStepMass)));
  const double tau = t / steps;
  const std::vector<double> w = poisson_weights(rate * tau);

  // Tail masses Pr{N > n} for the integral weights.
  std::vector<double> tail(w.size());
  {
    double acc = 0.0;
    for (std::size_t n = w.size(); n-- > 0;) {
      tail[n] = acc;
      acc += w[n];
    }
    // Mass beyond the truncation point is folded into the last weights.
    const double missing = std::max(0.0, 1.0 - acc);
    for (auto& v : tail) v += missing;
  }

  Value cur, next, acc, integral;
  for (int s = 0; s < steps; ++s) {
    cur = out.value;
    acc = w[0] * cur;
    if (with_integral) integral = (tail[0] / rate) * cur;
    for (std::size_t n = 1; n < w.size(); ++n) {
      step(cur, next);
      cur.swap(next);
      acc += w[n] * cur;
      if (with_integral) integral += (tail[n] / rate) * cur;
    }
    if (with_integral) out.integral += integral;
    out.value.swap(acc);
  }
  return out;
}

/// e^{Ft} for a subgenerator F and finite t >= 0.
inline Matrix expm_sub(const Matrix& F, double t) {
  if (!is_subgenerator(F)) throw InvalidMatrix("expm_sub: matrix is not a subgenerator");
  if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidMatrix("expm_sub: t must be finite and >= 0");
  const double q = uniformization_rate(F);
  const Matrix P = Matrix::Identity(F.rows(), F.cols()) + (q > 0 ? Matrix(F / q) : Matrix::Zero(F.rows(), F.cols()));
  auto step = [&P](const Matrix& in, Matrix& out) { out.noalias() = P * in; };
  return propagate<Matrix>(Matrix::Identity(F.rows(), F.cols()), q, t, step).value;
}

/// int_0^t e^{Fs} ds, which equals (I - e^{Ft})(-F)^{-1} when -F is
/// invertible. Pass t = +inf for (-F)^{-1}.
inline Matrix integral_exp(const Matrix& F, double t) {
  if (!is_subgenerator(F)) throw InvalidMatrix("integral_exp: matrix is not a subgenerator");
  if (!(t >= 0.0)) throw InvalidMatrix("integral_exp: t must be >= 0");
  const auto n = F.rows();
  if (std::isinf(t)) {
    Eigen::FullPivLU<Matrix> lu(-F);
    if (!lu.isInvertible()) throw InvalidMatrix("integral_exp: -F is singular, integral to infinity diverges");
    return lu.inverse();
  }
  const double q = uniformization_rate(F);
  const Matrix P = Matrix::Identity(n, n) + (q > 0 ? Matrix(F / q) : Matrix::Zero(n, n));
  auto step = [&P](const Matrix& in, Matrix& out) { out.noalias() = P * in; };
  return propagate<Matrix>(Matrix::Identity(n, n), q, t, step, true).integral;
}

namespace detail {

inline double stationary_residual(const RowVector& v, const Matrix& P) {
  return (v * P - v).lpNorm<1>();
}

inline RowVector clamp_normalize(RowVector v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::max(v[i], 0.0);
  const double s = v.sum();
  if (s > 0) v /= s;
  return v;
}

}  // namespace detail

/// Stationary distribution of a stochastic matrix with a single recurrent
/// class. Direct solve up to kDirectSolveLimit states, lazy power iteration
/// above that.
inline RowVector stationary(const Matrix& P, double tol = 1e-12, int max_iter = 1000000) {
  if (!is_stochastic(P, 1e-9)) throw InvalidMatrix("stationary: matrix is not stochastic");
  const auto n = P.rows();
  if (n == 1) return RowVector::Ones(1);

  if (static_cast<std::size_t>(n) <= kDirectSolveLimit) {
    // Solve (I - P)^T v^T = 0 with the last equation replaced by sum(v) = 1.
    Matrix M = Matrix::Identity(n, n) - P.transpose();
    M.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs[n - 1] = 1.0;
    Eigen::PartialPivLU<Matrix> lu(M);
    Vector v = lu.solve(rhs);
    for (int refine = 0; refine < 3; ++refine) {
      Vector r = rhs - M * v;
      if (r.lpNorm<1>() < 1e-16) break;
      v += lu.solve(r);
    }
    RowVector out = detail::clamp_normalize(v.transpose());
    const double res = detail::stationary_residual(out, P);
    if (!(res < std::max(tol, 1e-10))) {
      throw NonConvergence("stationary: direct solve residual " + std::to_string(res), {res});
    }
    return out;
  }

  RowVector v = RowVector::Constant(n, 1.0 / static_cast<double>(n));
  std::vector<double> history;
  for (int it = 0; it < max_iter; ++it) {
    RowVector next = 0.5 * (v + v * P);
    next /= next.sum();
    v.swap(next);
    if (it % 64 == 0) {
      const double res = detail::stationary_residual(v, P);
      history.push_back(res);
      if (res < tol) return v;
    }
  }
  throw NonConvergence("stationary: power iteration did not converge", std::move(history));
}

}  // namespace lbast::numerics
