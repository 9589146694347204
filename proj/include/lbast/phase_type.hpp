#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbast/error.hpp"
#include "lbast/numerics.hpp"

namespace lbast {

using numerics::Matrix;
using numerics::RowVector;
using numerics::Vector;

/// Phase-type law (alpha, A): time to absorption of a CTMC started in phase
/// i with probability alpha_i and transient subgenerator A.
class PhaseType {
 public:
  PhaseType(Vector alpha, Matrix A) : alpha_(std::move(alpha)), A_(std::move(A)) {
    validate();
    exit_ = -A_.rowwise().sum();
    for (Eigen::Index i = 0; i < exit_.size(); ++i) exit_[i] = std::max(exit_[i], 0.0);
  }

  int order() const noexcept { return static_cast<int>(alpha_.size()); }
  const Vector& alpha() const noexcept { return alpha_; }
  const Matrix& generator() const noexcept { return A_; }
  /// mu = -A 1.
  const Vector& exit_rates() const noexcept { return exit_; }

 private:
  void validate() const {
    const auto m = alpha_.size();
    if (m == 0) throw InvalidDistribution("phase-type: empty representation");
    if (A_.rows() != m || A_.cols() != m) throw InvalidDistribution("phase-type: alpha and A sizes differ");
    if (alpha_.minCoeff() < -1e-12) throw InvalidDistribution("phase-type: negative initial probability");
    if (std::abs(alpha_.sum() - 1.0) > 1e-9) throw InvalidDistribution("phase-type: initial vector must sum to 1");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(A_(i, i) < 0.0)) throw InvalidDistribution("phase-type: diagonal entries must be negative");
      double row = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (i != j && A_(i, j) < 0.0) throw InvalidDistribution("phase-type: negative off-diagonal rate");
        row += A_(i, j);
      }
      if (row > 1e-12 * std::abs(A_(i, i))) throw InvalidDistribution("phase-type: positive row sum");
    }
    // -A is nonsingular iff absorption is reachable from every phase.
    std::vector<char> reaches(static_cast<std::size_t>(m), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (-A_.row(i).sum() > 1e-12 * std::abs(A_(i, i))) reaches[static_cast<std::size_t>(i)] = 1;
    }
    for (bool changed = true; changed;) {
      changed = false;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (reaches[static_cast<std::size_t>(i)]) continue;
        for (Eigen::Index j = 0; j < m; ++j) {
          if (i != j && A_(i, j) > 0.0 && reaches[static_cast<std::size_t>(j)]) {
            reaches[static_cast<std::size_t>(i)] = 1;
            changed = true;
            break;
          }
        }
      }
    }
    for (char r : reaches) {
      if (!r) throw InvalidDistribution("phase-type: -A is singular (absorption not certain)");
    }
  }

  Vector alpha_;
  Matrix A_;
  Vector exit_;
};

inline PhaseType exponential(double rate) {
  if (!(rate > 0)) throw InvalidDistribution("exponential: rate must be positive");
  return PhaseType(Vector::Ones(1), Matrix::Constant(1, 1, -rate));
}

/// Erlang with `phases` stages, each of rate `rate` (mean phases / rate).
inline PhaseType erlang(int phases, double rate) {
  if (phases < 1 || !(rate > 0)) throw InvalidDistribution("erlang: need phases >= 1 and rate > 0");
  Vector alpha = Vector::Zero(phases);
  alpha[0] = 1.0;
  Matrix A = Matrix::Zero(phases, phases);
  for (int i = 0; i < phases; ++i) {
    A(i, i) = -rate;
    if (i + 1 < phases) A(i, i + 1) = rate;
  }
  return PhaseType(std::move(alpha), std::move(A));
}

/// Parameters of a unit-mean mixture of two Erlang(k) branches: with
/// probability p an Erlang(k, k*mu1) job, otherwise Erlang(k, k*mu2).
struct MErlangParams {
  double scv = 1.0;
  double f = 0.5;
  int k = 1;
  double adjusted_scv = 1.0;
  double p = 0.5;
  double mu1 = 1.0;
  double mu2 = 1.0;

  /// Mean size of the small (type-1) jobs.
  double small_job_mean() const { return 1.0 / mu1; }
};

/// Matches mean 1, the given SCV and the fraction f of work carried by the
/// small jobs. The Erlang order k is absorbed by fitting a hyperexponential
/// to the adjusted SCV 2(SCV+1)/(1+1/k) - 1.
inline MErlangParams merlang_params(double scv, double f, int k) {
  if (!(f > 0.0 && f < 1.0)) throw std::domain_error("merlang: f must lie in (0,1)");
  if (k < 1) throw std::domain_error("merlang: k must be positive");
  MErlangParams out;
  out.scv = scv;
  out.f = f;
  out.k = k;
  const double s = 2.0 * (scv + 1.0) / (1.0 + 1.0 / k) - 1.0;
  out.adjusted_scv = s;
  // Allow rounding slack so the exact Erlang case scv = 1/k still fits.
  if (s < 1.0 - 1e-12) throw InfeasibleFit("merlang: adjusted SCV below 1 (SCV < 1/k)");
  const double sc = std::max(s, 1.0);
  const double disc = (sc - 1.0) * (sc - 1.0 + 8.0 * f * (1.0 - f));
  if (disc < 0.0) throw InfeasibleFit("merlang: negative discriminant");
  const double root = std::sqrt(disc);
  const double denom = 2.0 * f * (sc + 1.0);
  // mu1 is the larger root of the moment quadratic; the smaller root is the
  // long-job rate only when f = 1/2, so mu2 follows from the unit mean:
  // (1 - p) / mu2 = 1 - f.
  out.mu1 = (sc + (4.0 * f - 1.0) + root) / denom;
  out.p = out.mu1 * f;
  out.mu2 = (1.0 - out.p) / (1.0 - f);
  if (!(out.mu2 > 0.0) || !(out.p > 0.0) || out.p > 1.0 + 1e-12) {
    throw InfeasibleFit("merlang: no valid (p, mu1, mu2) for these parameters");
  }
  out.p = std::min(out.p, 1.0);
  return out;
}

inline PhaseType merlang(const MErlangParams& prm) {
  const int k = prm.k;
  Vector alpha = Vector::Zero(2 * k);
  alpha[0] = prm.p;
  alpha[k] = 1.0 - prm.p;
  Matrix A = Matrix::Zero(2 * k, 2 * k);
  for (int i = 0; i < k; ++i) {
    A(i, i) = -k * prm.mu1;
    A(k + i, k + i) = -k * prm.mu2;
    if (i + 1 < k) {
      A(i, i + 1) = k * prm.mu1;
      A(k + i, k + i + 1) = k * prm.mu2;
    }
  }
  return PhaseType(std::move(alpha), std::move(A));
}

/// MErlang(scv, f, k); k = 1 gives the two-phase hyperexponential HEXP(scv, f).
inline PhaseType fit_merlang(double scv, double f, int k) { return merlang(merlang_params(scv, f, k)); }

struct Moments {
  double mean = 0.0;
  double scv = 0.0;
};

/// (-A)^{-1} 1: expected time to absorption from each phase.
inline Vector absorption_times(const PhaseType& ph) {
  Eigen::PartialPivLU<Matrix> lu(-ph.generator());
  return lu.solve(Vector::Ones(ph.order()));
}

inline Moments moments(const PhaseType& ph) {
  Eigen::PartialPivLU<Matrix> lu(-ph.generator());
  const Vector h = lu.solve(Vector::Ones(ph.order()));
  const Vector h2 = lu.solve(h);
  const double mean = ph.alpha().dot(h);
  const double second = 2.0 * ph.alpha().dot(h2);
  if (!std::isfinite(mean) || !(mean > 0)) throw InvalidDistribution("moments: singular -A");
  return {mean, second / (mean * mean) - 1.0};
}

/// alpha e^{Ax}: the (defective) phase distribution after surviving x.
inline RowVector survival_vector(const PhaseType& ph, double x) {
  const Matrix& A = ph.generator();
  const double q = numerics::uniformization_rate(A);
  auto step = [&A, q](const RowVector& in, RowVector& out) { out = in + (in * A) / q; };
  return numerics::propagate<RowVector>(ph.alpha().transpose(), q, x, step).value;
}

/// Pr{X > x} = alpha e^{Ax} 1.
inline double survival(const PhaseType& ph, double x) {
  if (!(x >= 0.0)) throw std::domain_error("survival: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  return std::clamp(survival_vector(ph, x).sum(), 0.0, 1.0);
}

/// E[X | X >= c] - c, the mean residual size of a job that has received c
/// units of service.
inline double residual_mean(const PhaseType& ph, double c) {
  if (!(c >= 0.0) || std::isinf(c)) throw std::domain_error("residual_mean: c must be finite and >= 0");
  const RowVector v = survival_vector(ph, c);
  const double s = v.sum();
  if (!(s > 0.0)) throw VanishingSurvival("residual_mean: survival at c underflows to zero");
  return v.dot(absorption_times(ph).transpose()) / s;
}

inline constexpr int kDefaultConvolutionCap = 4096;

/// X_j (the law started in phase j, 1-based) convolved with `copies`
/// independent copies of X, as an explicit order (copies+1)*m representation.
inline PhaseType convolution_rep(const PhaseType& ph, int start_phase, int copies,
                                 int cap = kDefaultConvolutionCap) {
  const int m = ph.order();
  if (start_phase < 1 || start_phase > m) throw std::out_of_range("convolution_rep: start phase out of range");
  if (copies < 0) throw std::out_of_range("convolution_rep: negative copy count");
  const long long n = static_cast<long long>(copies + 1) * m;
  if (n > cap) throw std::length_error("convolution_rep: order " + std::to_string(n) + " exceeds cap");
  const auto blocks = copies + 1;
  Matrix A = Matrix::Zero(n, n);
  const Matrix restart = ph.exit_rates() * ph.alpha().transpose();
  for (int b = 0; b < blocks; ++b) {
    A.block(b * m, b * m, m, m) = ph.generator();
    if (b + 1 < blocks) A.block(b * m, (b + 1) * m, m, m) = restart;
  }
  Vector alpha = Vector::Zero(n);
  alpha[start_phase - 1] = 1.0;
  return PhaseType(std::move(alpha), std::move(A));
}

/// Draws sizes by walking the phase process. Build once per distribution;
/// the caller owns the random engine.
class PhaseTypeSampler {
 public:
  explicit PhaseTypeSampler(const PhaseType& ph) : m_(ph.order()) {
    const Matrix& A = ph.generator();
    start_.resize(static_cast<std::size_t>(m_));
    double acc = 0.0;
    for (int i = 0; i < m_; ++i) {
      acc += std::max(ph.alpha()[i], 0.0);
      start_[static_cast<std::size_t>(i)] = acc;
    }
    for (auto& v : start_) v /= acc;
    rates_.resize(static_cast<std::size_t>(m_));
    jumps_.assign(static_cast<std::size_t>(m_) * static_cast<std::size_t>(m_), 0.0);
    for (int i = 0; i < m_; ++i) {
      const double total = -A(i, i);
      rates_[static_cast<std::size_t>(i)] = total;
      double c = 0.0;
      for (int j = 0; j < m_; ++j) {
        if (j != i) c += A(i, j) / total;
        jumps_[static_cast<std::size_t>(i * m_ + j)] = c;
      }
      // Remaining probability 1 - c is absorption.
    }
  }

  template <class Engine>
  double operator()(Engine& rng) const {
    int phase = pick(start_.data(), uniform(rng));
    double x = 0.0;
    for (;;) {
      const auto i = static_cast<std::size_t>(phase);
      x += -std::log1p(-uniform(rng)) / rates_[i];
      const double u = uniform(rng);
      const double* row = &jumps_[i * static_cast<std::size_t>(m_)];
      if (u >= row[m_ - 1]) return x;
      phase = pick(row, u);
    }
  }

 private:
  template <class Engine>
  static double uniform(Engine& rng) {
    static_assert(Engine::max() == std::numeric_limits<std::uint64_t>::max(), "expects a 64-bit engine");
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

  int pick(const double* cumulative, double u) const {
    int j = 0;
    while (j + 1 < m_ && u >= cumulative[j]) ++j;
    return j;
  }

  int m_;
  std::vector<double> start_;
  std::vector<double> rates_;
  std::vector<double> jumps_;
};

template <class Engine>
double sample(const PhaseType& ph, Engine& rng) {
  return PhaseTypeSampler(ph)(rng);
}

}  // namespace lbast
