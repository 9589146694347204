#pragma once

// Large-system fixed point for aversion-score dispatching.
//
// The queue at the cavity is an M/PH/1 FCFS queue whose Poisson arrival rate
// depends on its queue length ell and on the layer k of the age of the job in
// service. T maps a rate table to the stationary law of that queue; H maps a
// stationary law to the rates seen by a server whose d-1 competitors are
// independent copies of it. The fixed point pi = T(H(pi)) is found by
// successive substitution.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lbast/error.hpp"
#include "lbast/numerics.hpp"
#include "lbast/phase_type.hpp"
#include "lbast/policy.hpp"

namespace lbast {

/// Arrival rates lambda_{k,ell} for busy states (k = 1..layers,
/// ell = 1..buffer) plus the idle rate. lambda_{k,B} is always 0.
struct ArrivalRateTable {
  int layers = 1;
  int buffer = 1;
  double idle = 0.0;
  std::vector<double> busy;

  ArrivalRateTable() : busy(1, 0.0) {}
  ArrivalRateTable(int layers_, int buffer_)
      : layers(layers_), buffer(buffer_), busy(static_cast<std::size_t>(layers_) * buffer_, 0.0) {}

  std::size_t index(int k, int ell) const {
    return static_cast<std::size_t>(k - 1) * buffer + static_cast<std::size_t>(ell - 1);
  }
  double at(int k, int ell) const { return busy[index(k, ell)]; }
  void set(int k, int ell, double rate) { busy[index(k, ell)] = ell == buffer ? 0.0 : rate; }

  /// Largest rate in layer k.
  double max_rate(int k) const {
    double out = 0.0;
    for (int ell = 1; ell <= buffer; ++ell) out = std::max(out, at(k, ell));
    return out;
  }
};

/// Stationary law of the queue at the cavity: idle mass plus
/// pi_{k,ell,j} for k = 1..layers, ell = 1..buffer, j = 1..phases.
struct CavityDistribution {
  int layers = 1;
  int buffer = 1;
  int phases = 1;
  double idle = 1.0;
  std::vector<double> busy;

  CavityDistribution() : busy(1, 0.0) {}
  CavityDistribution(int layers_, int buffer_, int phases_)
      : layers(layers_), buffer(buffer_), phases(phases_),
        busy(static_cast<std::size_t>(layers_) * buffer_ * phases_, 0.0) {}

  std::size_t index(int k, int ell, int j) const {
    return (static_cast<std::size_t>(k - 1) * buffer + static_cast<std::size_t>(ell - 1)) * phases +
           static_cast<std::size_t>(j - 1);
  }
  double at(int k, int ell, int j) const { return busy[index(k, ell, j)]; }

  /// x_{k,ell} = sum_j pi_{k,ell,j}.
  double marginal(int k, int ell) const {
    double s = 0.0;
    const std::size_t base = index(k, ell, 1);
    for (int j = 0; j < phases; ++j) s += busy[base + static_cast<std::size_t>(j)];
    return s;
  }

  double busy_mass() const { return std::accumulate(busy.begin(), busy.end(), 0.0); }
  double total() const { return idle + busy_mass(); }

  /// Probability of exactly ell jobs (ell >= 1), summed over layers.
  double queue_mass(int ell) const {
    double s = 0.0;
    for (int k = 1; k <= layers; ++k) s += marginal(k, ell);
    return s;
  }

  /// u_ell = Pr{queue length >= ell}; u_0 = 1.
  std::vector<double> queue_tail() const {
    std::vector<double> u(static_cast<std::size_t>(buffer) + 2, 0.0);
    for (int ell = buffer; ell >= 1; --ell) {
      u[static_cast<std::size_t>(ell)] = u[static_cast<std::size_t>(ell) + 1] + queue_mass(ell);
    }
    u[0] = 1.0;
    return u;
  }

  /// Same law on a larger buffer (new states get zero mass).
  CavityDistribution with_buffer(int new_buffer) const {
    CavityDistribution out(layers, new_buffer, phases);
    out.idle = idle;
    for (int k = 1; k <= layers; ++k)
      for (int ell = 1; ell <= std::min(buffer, new_buffer); ++ell)
        for (int j = 1; j <= phases; ++j) out.busy[out.index(k, ell, j)] = at(k, ell, j);
    return out;
  }
};

/// sum |a - b| over idle and busy entries; the shorter buffer is zero-padded.
inline double l1_distance(const CavityDistribution& a, const CavityDistribution& b) {
  if (a.layers != b.layers || a.phases != b.phases) throw std::invalid_argument("l1_distance: shapes differ");
  const int B = std::max(a.buffer, b.buffer);
  const CavityDistribution& pa = a.buffer == B ? a : b;
  const CavityDistribution& pb = a.buffer == B ? b : a;
  double s = std::abs(a.idle - b.idle);
  for (int k = 1; k <= pa.layers; ++k)
    for (int ell = 1; ell <= B; ++ell)
      for (int j = 1; j <= pa.phases; ++j) {
        const double y = ell <= pb.buffer ? pb.at(k, ell, j) : 0.0;
        s += std::abs(pa.at(k, ell, j) - y);
      }
  return s;
}

// ---------------------------------------------------------------------------
// Dense block route: the embedded chain observed at service starts and at
// layer boundaries, materialized matrix by matrix.

/// Matrices of the embedded chain. Index k-1 holds layer k (k = 1..layers).
struct DtmcBlocks {
  int layers = 1;
  int buffer = 1;
  int phases = 1;
  Matrix G;
  std::vector<Matrix> F;
  std::vector<Matrix> Lambda;
  std::vector<Matrix> Psi;
  std::vector<Matrix> Omega;
};

namespace detail {

inline void check_shapes(const ArrivalRateTable& rates, const LayerGrid& grid) {
  if (rates.layers != grid.layers()) throw std::invalid_argument("rate table and layer grid disagree on r");
  if (rates.buffer < 1) throw std::invalid_argument("buffer must be >= 1");
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace detail

inline DtmcBlocks build_blocks(const ArrivalRateTable& rates, const PhaseType& ph, const LayerGrid& grid) {
  detail::check_shapes(rates, grid);
  const int B = rates.buffer;
  const int m = ph.order();
  const int L = rates.layers;
  DtmcBlocks out;
  out.layers = L;
  out.buffer = B;
  out.phases = m;

  // G = (I_B (x) mu)(S (x) alpha) with S sending ell to max(ell - 1, 1).
  Matrix S = Matrix::Zero(B, B);
  for (int ell = 0; ell < B; ++ell) S(ell, std::max(ell - 1, 0)) = 1.0;
  out.G = detail::kron(Matrix::Identity(B, B), ph.exit_rates()) * detail::kron(S, ph.alpha().transpose());

  const Matrix IA = detail::kron(Matrix::Identity(B, B), ph.generator());
  for (int k = 1; k <= L; ++k) {
    Matrix births = Matrix::Zero(B, B);
    for (int ell = 1; ell < B; ++ell) {
      births(ell - 1, ell - 1) = -rates.at(k, ell);
      births(ell - 1, ell) = rates.at(k, ell);
    }
    Matrix F = IA + detail::kron(births, Matrix::Identity(m, m));
    const double width = grid.width(k);
    if (std::isinf(width)) {
      out.Lambda.push_back(Matrix::Zero(B * m, B * m));
      out.Psi.push_back(numerics::integral_exp(F, width));
    } else {
      out.Lambda.push_back(numerics::expm_sub(F, width));
      out.Psi.push_back(numerics::integral_exp(F, width));
    }
    out.F.push_back(std::move(F));
  }
  out.Omega.resize(static_cast<std::size_t>(L));
  out.Omega[static_cast<std::size_t>(L - 1)] = out.Psi.back() * out.G;
  for (int k = L - 1; k >= 1; --k) {
    const auto i = static_cast<std::size_t>(k - 1);
    out.Omega[i] = out.Psi[i] * out.G + out.Lambda[i] * out.Omega[i + 1];
  }
  return out;
}

/// pi_hat^(0..layers-1) of the embedded chain, jointly normalized.
inline std::vector<RowVector> dtmc_steady(const DtmcBlocks& blocks) {
  std::vector<RowVector> pi;
  pi.push_back(numerics::stationary(blocks.Omega.front()));
  for (int k = 1; k < blocks.layers; ++k) pi.push_back(pi.back() * blocks.Lambda[static_cast<std::size_t>(k - 1)]);
  double total = 0.0;
  for (const auto& v : pi) total += v.sum();
  for (auto& v : pi) v /= total;
  return pi;
}

/// Busy-censored probabilities pi^busy_{k,ell,j}, normalized to 1, in
/// CavityDistribution index order.
inline std::vector<double> busy_censor(const std::vector<RowVector>& pi_hat, const DtmcBlocks& blocks) {
  const auto n = static_cast<std::size_t>(blocks.buffer) * blocks.phases;
  std::vector<double> out(static_cast<std::size_t>(blocks.layers) * n);
  for (int k = 1; k <= blocks.layers; ++k) {
    const RowVector t = pi_hat[static_cast<std::size_t>(k - 1)] * blocks.Psi[static_cast<std::size_t>(k - 1)];
    for (std::size_t i = 0; i < n; ++i) out[static_cast<std::size_t>(k - 1) * n + i] = std::max(t[static_cast<Eigen::Index>(i)], 0.0);
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (auto& v : out) v /= total;
  return out;
}

/// Idle mass 1 - load and busy mass scaled to load (work conservation with
/// unit mean job size).
inline CavityDistribution assemble(const std::vector<double>& busy, double load, int layers, int buffer, int phases) {
  if (!(load >= 0.0 && load < 1.0)) throw std::domain_error("assemble: offered load must lie in [0, 1)");
  CavityDistribution out(layers, buffer, phases);
  if (busy.size() != out.busy.size()) throw std::invalid_argument("assemble: busy vector has the wrong size");
  out.idle = 1.0 - load;
  for (std::size_t i = 0; i < busy.size(); ++i) out.busy[i] = load * busy[i];
  return out;
}

// ---------------------------------------------------------------------------
// Structured route used by the fixed point. Same chain as above, but no mB x mB
// matrix is ever formed: exponentials act on row vectors and on the mB x B
// matrix of completion rates, and the return map at service starts is reduced
// to a B x B chain on the queue length seen at service completions.

namespace detail {

/// One layer's generator F = I_B (x) A + births (x) I_m, applied blockwise.
class LayerOperator {
 public:
  LayerOperator(const PhaseType& ph, const ArrivalRateTable& rates, int k)
      : A_(ph.generator()), m_(ph.order()), B_(rates.buffer), lambda_(static_cast<std::size_t>(B_)) {
    double lmax = 0.0;
    for (int ell = 1; ell <= B_; ++ell) {
      lambda_[static_cast<std::size_t>(ell - 1)] = ell < B_ ? rates.at(k, ell) : 0.0;
      lmax = std::max(lmax, lambda_[static_cast<std::size_t>(ell - 1)]);
    }
    q_ = numerics::uniformization_rate(A_) + lmax;
    inv_.reserve(static_cast<std::size_t>(B_));
    for (int ell = 0; ell < B_; ++ell) {
      Matrix M = -A_;
      M.diagonal().array() += lambda_[static_cast<std::size_t>(ell)];
      inv_.push_back(M.inverse());
    }
  }

  double rate() const noexcept { return q_; }

  /// out = x (I + F/q) for a row vector x.
  void row_step(const RowVector& x, RowVector& out) const {
    out.resize(x.size());
    for (int ell = 0; ell < B_; ++ell) {
      const double lam = lambda_[static_cast<std::size_t>(ell)];
      auto xo = x.segment(ell * m_, m_);
      auto o = out.segment(ell * m_, m_);
      o.noalias() = xo * A_;
      o = xo + (o - lam * xo) / q_;
      if (ell > 0) o += (lambda_[static_cast<std::size_t>(ell - 1)] / q_) * x.segment((ell - 1) * m_, m_);
    }
  }

  /// out = (I + F/q) X for an mB x B matrix whose block row ell vanishes in
  /// columns < ell (the queue never shrinks during one service).
  void column_step(const Matrix& X, Matrix& out) const {
    if (out.rows() != X.rows() || out.cols() != X.cols()) out = Matrix::Zero(X.rows(), X.cols());
    for (int ell = 0; ell < B_; ++ell) {
      const double lam = lambda_[static_cast<std::size_t>(ell)];
      const int cols = B_ - ell;
      auto xo = X.block(ell * m_, ell, m_, cols);
      auto o = out.block(ell * m_, ell, m_, cols);
      o.noalias() = A_ * xo;
      o = xo + (o - lam * xo) / q_;
      if (ell + 1 < B_) o += (lam / q_) * X.block((ell + 1) * m_, ell, m_, cols);
    }
  }

  /// Y = (-F)^{-1} (I_B (x) mu): expected completion rates accrued until the
  /// layer's job leaves, by starting queue block and completion queue length.
  Matrix solve_exit(const Vector& mu) const {
    Matrix Y = Matrix::Zero(static_cast<Eigen::Index>(B_) * m_, B_);
    for (int ell = B_ - 1; ell >= 0; --ell) {
      const double lam = lambda_[static_cast<std::size_t>(ell)];
      const int cols = B_ - ell;
      Matrix rhs = Matrix::Zero(m_, cols);
      rhs.col(0) = mu;
      if (ell + 1 < B_) rhs += lam * Y.block((ell + 1) * m_, ell, m_, cols);
      Y.block(ell * m_, ell, m_, cols).noalias() = inv_[static_cast<std::size_t>(ell)] * rhs;
    }
    return Y;
  }

  /// x (-F)^{-1} for a row vector x.
  RowVector solve_row(const RowVector& x) const {
    RowVector y(x.size());
    for (int ell = 0; ell < B_; ++ell) {
      RowVector rhs = x.segment(ell * m_, m_);
      if (ell > 0) rhs += lambda_[static_cast<std::size_t>(ell - 1)] * y.segment((ell - 1) * m_, m_);
      y.segment(ell * m_, m_).noalias() = rhs * inv_[static_cast<std::size_t>(ell)];
    }
    return y;
  }

 private:
  const Matrix& A_;
  int m_;
  int B_;
  std::vector<double> lambda_;
  std::vector<Matrix> inv_;
  double q_ = 0.0;
};

}  // namespace detail

/// T map: busy-censored stationary probabilities of the queue driven by
/// `rates`, normalized to 1. Equal to busy_censor(dtmc_steady(build_blocks))
/// without forming any mB x mB matrix.
inline std::vector<double> censored_busy_probabilities(const ArrivalRateTable& rates, const PhaseType& ph,
                                                       const LayerGrid& grid) {
  detail::check_shapes(rates, grid);
  const int B = rates.buffer;
  const int m = ph.order();
  const int L = rates.layers;
  const Vector& mu = ph.exit_rates();

  // Backward pass: Z^(k) = Psi^(k) (I (x) mu) + Lambda^(k) Z^(k+1), computed as
  // Y + Lambda^(k) (Z^(k+1) - Y) with Y = (-F^(k))^{-1} (I (x) mu).
  Matrix Z;
  for (int k = L; k >= 1; --k) {
    detail::LayerOperator op(ph, rates, k);
    Matrix Y = op.solve_exit(mu);
    if (k == L) {
      Z = std::move(Y);
      continue;
    }
    auto step = [&op](const Matrix& in, Matrix& out) { op.column_step(in, out); };
    Matrix D = Z - Y;
    Z = Y + numerics::propagate<Matrix>(D, op.rate(), grid.width(k), step).value;
  }

  // Return chain on the queue length at service completion. A completion at
  // length ell starts the next service at max(ell - 1, 1).
  Matrix K(B, B);
  for (int ell = 1; ell <= B; ++ell) {
    const int start = std::max(ell - 1, 1);
    K.row(ell - 1) = ph.alpha().transpose() * Z.middleRows((start - 1) * m, m);
  }
  for (int ell = 0; ell < B; ++ell) {
    const double s = K.row(ell).sum();
    if (s > 0) K.row(ell) /= s;
  }
  const RowVector g = numerics::stationary(K);

  RowVector v = RowVector::Zero(static_cast<Eigen::Index>(B) * m);
  for (int ell = 1; ell <= B; ++ell) {
    const int start = std::max(ell - 1, 1);
    v.segment((start - 1) * m, m) += g[ell - 1] * ph.alpha().transpose();
  }

  // Forward pass: time spent in each layer between observations.
  std::vector<double> out(static_cast<std::size_t>(L) * B * m);
  for (int k = 1; k <= L; ++k) {
    detail::LayerOperator op(ph, rates, k);
    RowVector occupancy;
    if (k == L) {
      occupancy = op.solve_row(v);
    } else {
      auto step = [&op](const RowVector& in, RowVector& o) { op.row_step(in, o); };
      auto res = numerics::propagate<RowVector>(v, op.rate(), grid.width(k), step, true);
      occupancy = std::move(res.integral);
      v = std::move(res.value);
    }
    const std::size_t base = static_cast<std::size_t>(k - 1) * B * m;
    for (Eigen::Index i = 0; i < occupancy.size(); ++i) out[base + static_cast<std::size_t>(i)] = std::max(occupancy[i], 0.0);
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (auto& x : out) x /= total;
  return out;
}

/// Full T map: the cavity law for offered load `load` given arrival rates.
inline CavityDistribution steady_state(const ArrivalRateTable& rates, const PhaseType& ph, const LayerGrid& grid,
                                       double load) {
  return assemble(censored_busy_probabilities(rates, ph, grid), load, rates.layers, rates.buffer, ph.order());
}

// ---------------------------------------------------------------------------
// H map.

/// Rate at which a state with tie mass w and strictly-worse mass v receives
/// jobs, per unit of load:
///   d * sum_{j<d} 1/(j+1) C(d-1,j) w^j v^{d-1-j} = sum_{j<d} C(d,j+1) w^j v^{d-1-j}.
inline double join_factor(double w, double v, int d) {
  double sum = 0.0;
  double binom = d;  // C(d, 1)
  double wp = 1.0;
  for (int j = 0; j < d; ++j) {
    sum += binom * wp * std::pow(v, d - 1 - j);
    binom = binom * (d - j - 1) / (j + 2);
    wp *= w;
  }
  return sum;
}

/// Per-state u, v, w masses induced by the ordering of a score table.
class StateOrdering {
 public:
  StateOrdering(const ScoreTable& scores, int buffer) : layers_(scores.layers()), buffer_(buffer) {
    const int n = layers_ * buffer_ + 1;
    scores_.reserve(static_cast<std::size_t>(n));
    scores_.push_back(scores(0, 0));
    for (int k = 1; k <= layers_; ++k)
      for (int ell = 1; ell <= buffer_; ++ell) scores_.push_back(scores(k, ell));
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(), [this](int a, int b) {
      return scores_[static_cast<std::size_t>(a)] < scores_[static_cast<std::size_t>(b)];
    });
    group_end_.resize(static_cast<std::size_t>(n));
    for (int i = n - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      const bool last = i == n - 1 ||
                        !(scores_[static_cast<std::size_t>(order_[ui])] == scores_[static_cast<std::size_t>(order_[ui + 1])]);
      group_end_[ui] = last ? i + 1 : group_end_[ui + 1];
    }
  }

  int buffer() const noexcept { return buffer_; }

  struct Masses {
    double u, v, w;
  };

  /// Masses for every state, index 0 = idle, 1 + (k-1)*B + (ell-1) = busy.
  std::vector<Masses> masses(const CavityDistribution& pi) const {
    const int n = layers_ * buffer_ + 1;
    std::vector<double> x(static_cast<std::size_t>(n));
    x[0] = pi.idle;
    for (int k = 1; k <= layers_; ++k)
      for (int ell = 1; ell <= buffer_; ++ell)
        x[static_cast<std::size_t>(1 + (k - 1) * buffer_ + (ell - 1))] = pi.marginal(k, ell);

    std::vector<Masses> out(static_cast<std::size_t>(n));
    // Suffix sums from the worst scores keep small tails accurate.
    double above = 0.0;
    int i = n;
    while (i > 0) {
      int begin = i - 1;
      while (begin > 0 && group_end_[static_cast<std::size_t>(begin - 1)] == i) --begin;
      double group = 0.0;
      for (int t = begin; t < i; ++t) group += x[static_cast<std::size_t>(order_[static_cast<std::size_t>(t)])];
      for (int t = begin; t < i; ++t) out[static_cast<std::size_t>(order_[static_cast<std::size_t>(t)])] = {above + group, above, group};
      above += group;
      i = begin;
    }
    return out;
  }

 private:
  int layers_;
  int buffer_;
  std::vector<AversionScore> scores_;
  std::vector<int> order_;
  std::vector<int> group_end_;
};

inline ArrivalRateTable arrival_rates(const CavityDistribution& pi, const StateOrdering& ordering, int d, double load) {
  if (d < 1) throw std::invalid_argument("arrival_rates: d must be >= 1");
  if (ordering.buffer() != pi.buffer) throw std::invalid_argument("arrival_rates: ordering built for another buffer");
  ArrivalRateTable out(pi.layers, pi.buffer);
  const auto masses = ordering.masses(pi);
  out.idle = load * join_factor(masses[0].w, masses[0].v, d);
  for (int k = 1; k <= pi.layers; ++k)
    for (int ell = 1; ell <= pi.buffer; ++ell) {
      const auto& ms = masses[static_cast<std::size_t>(1 + (k - 1) * pi.buffer + (ell - 1))];
      out.set(k, ell, load * join_factor(ms.w, ms.v, d));
    }
  return out;
}

/// H map: lambda_act(k, ell) = lambda d sum_j 1/(j+1) C(d-1,j) w^j v^{d-1-j}.
inline ArrivalRateTable arrival_rates(const CavityDistribution& pi, const Policy& policy, const LayerGrid& grid, int d,
                                      double load, const PhaseType* job_size = nullptr) {
  const ScoreTable scores(policy, grid, job_size);
  if (scores.layers() != pi.layers) throw std::invalid_argument("arrival_rates: grid and distribution disagree on r");
  return arrival_rates(pi, StateOrdering(scores, pi.buffer), d, load);
}

/// Time-average rate at which the cavity receives jobs,
/// idle*lambda_0 + sum x_{k,ell} lambda_act(k,ell), using unblocked rates
/// (ell = B included). Equals the offered load for any law.
inline double offered_flow(const CavityDistribution& pi, const StateOrdering& ordering, int d, double load) {
  const auto masses = ordering.masses(pi);
  double s = pi.idle * load * join_factor(masses[0].w, masses[0].v, d);
  for (int k = 1; k <= pi.layers; ++k)
    for (int ell = 1; ell <= pi.buffer; ++ell) {
      const auto& ms = masses[static_cast<std::size_t>(1 + (k - 1) * pi.buffer + (ell - 1))];
      s += pi.marginal(k, ell) * load * join_factor(ms.w, ms.v, d);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Fixed point.

struct SolverOptions {
  double tol = 1e-10;
  int max_iterations = 500;
  int initial_buffer = 10;
  int max_buffer = 400;
  /// Grow the buffer while the mass at ell = B exceeds this.
  double tail_mass = 1e-12;
  double buffer_growth = 1.5;
  /// Consecutive residual increases that switch on damping.
  int oscillation_window = 5;
  double damping = 0.5;
};

struct FixedPointResult {
  CavityDistribution pi;
  /// H(pi) at the returned pi.
  ArrivalRateTable rates;
  LayerGrid grid;
  int iterations = 0;
  std::vector<double> residuals;
  bool damped = false;
  /// The buffer hit max_buffer with tail mass still above tail_mass.
  bool buffer_capped = false;
};

namespace detail {

inline void check_load(double load) {
  if (!(load >= 0.0 && load < 1.0)) throw std::domain_error("offered load must lie in [0, 1)");
}

inline void check_unit_mean(const PhaseType& ph) {
  const double mean = moments(ph).mean;
  if (std::abs(mean - 1.0) > 1e-9) {
    throw InvalidDistribution("job size law must have mean 1 (got " + std::to_string(mean) + ")");
  }
}

}  // namespace detail

/// Iterates pi <- T(H(pi)) from the all-idle law until the L1 change drops
/// below opts.tol. Throws NonConvergence (with the residual history) after
/// opts.max_iterations.
inline FixedPointResult fixed_point(const Policy& policy, double load, const PhaseType& ph, const LayerGrid& grid,
                                    int d, const SolverOptions& opts = {}) {
  detail::check_load(load);
  detail::check_unit_mean(ph);
  if (d < 1) throw std::invalid_argument("fixed_point: d must be >= 1");
  const ScoreTable scores(policy, grid, &ph);

  int B = std::max(2, std::min(opts.initial_buffer, opts.max_buffer));
  FixedPointResult res;
  res.grid = grid;
  res.pi = CavityDistribution(grid.layers(), B, ph.order());
  res.pi.idle = 1.0;
  std::optional<StateOrdering> ordering(std::in_place, scores, B);

  int increases = 0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const ArrivalRateTable rates = arrival_rates(res.pi, *ordering, d, load);
    CavityDistribution next = steady_state(rates, ph, grid, load);
    double residual = l1_distance(next, res.pi);
    if (res.damped) {
      for (std::size_t i = 0; i < next.busy.size(); ++i)
        next.busy[i] = opts.damping * next.busy[i] + (1.0 - opts.damping) * res.pi.busy[i];
      next.idle = opts.damping * next.idle + (1.0 - opts.damping) * res.pi.idle;
    }
    if (!res.residuals.empty() && residual > res.residuals.back()) {
      if (++increases >= opts.oscillation_window) res.damped = true;
    } else {
      increases = 0;
    }
    res.residuals.push_back(residual);
    res.iterations = it;

    bool grown = false;
    if (next.queue_mass(B) > opts.tail_mass) {
      if (B < opts.max_buffer) {
        B = std::min(opts.max_buffer, std::max(B + 1, static_cast<int>(std::ceil(B * opts.buffer_growth))));
        next = next.with_buffer(B);
        ordering.emplace(scores, B);
        grown = true;
      } else {
        res.buffer_capped = true;
      }
    }
    res.pi = std::move(next);
    if (!grown && residual < opts.tol) {
      res.rates = arrival_rates(res.pi, *ordering, d, load);
      return res;
    }
  }
  throw NonConvergence("fixed_point: no convergence after " + std::to_string(opts.max_iterations) + " iterations",
                       res.residuals);
}

}  // namespace lbast
