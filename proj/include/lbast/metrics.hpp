#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lbast/cavity.hpp"
#include "lbast/error.hpp"
#include "lbast/phase_type.hpp"

namespace lbast {

struct MeanMetrics {
  double eq = 0.0;  ///< mean queue length
  double er = 1.0;  ///< mean response time
  double ew = 0.0;  ///< mean waiting time
};

/// E[Q] = sum ell pi, then Little's law with unit mean job size.
inline MeanMetrics mean_metrics(const CavityDistribution& pi, double load) {
  MeanMetrics out;
  for (int ell = 1; ell <= pi.buffer; ++ell) out.eq += ell * pi.queue_mass(ell);
  if (load > 0.0) {
    out.er = out.eq / load;
    out.ew = out.er - 1.0;
  }
  return out;
}

/// Probability that an arriving job joins a server in state (k, ell, j),
/// plus the probability that it joins an idle server.
struct JoinLaw {
  int layers = 1;
  int buffer = 1;
  int phases = 1;
  double idle = 1.0;
  std::vector<double> busy;

  double at(int k, int ell, int j) const {
    return busy[(static_cast<std::size_t>(k - 1) * buffer + static_cast<std::size_t>(ell - 1)) * phases +
                static_cast<std::size_t>(j - 1)];
  }
  double busy_mass() const { return std::accumulate(busy.begin(), busy.end(), 0.0); }

  /// J_{ell,j} = sum_k J_{k,ell,j}, laid out as (ell - 1) * phases + (j - 1).
  std::vector<double> by_length_phase() const {
    std::vector<double> out(static_cast<std::size_t>(buffer) * phases, 0.0);
    for (int k = 1; k <= layers; ++k)
      for (int ell = 1; ell <= buffer; ++ell)
        for (int j = 1; j <= phases; ++j)
          out[static_cast<std::size_t>(ell - 1) * phases + static_cast<std::size_t>(j - 1)] += at(k, ell, j);
    return out;
  }
};

/// J_{k,ell,j} = (pi_{k,ell,j} / w)(u^d - v^d), in the binomial-sum form.
inline JoinLaw join_law(const CavityDistribution& pi, const StateOrdering& ordering, int d) {
  JoinLaw out;
  out.layers = pi.layers;
  out.buffer = pi.buffer;
  out.phases = pi.phases;
  out.busy.resize(pi.busy.size());
  const auto masses = ordering.masses(pi);
  out.idle = pi.idle * join_factor(masses[0].w, masses[0].v, d);
  for (int k = 1; k <= pi.layers; ++k)
    for (int ell = 1; ell <= pi.buffer; ++ell) {
      const auto& ms = masses[static_cast<std::size_t>(1 + (k - 1) * pi.buffer + (ell - 1))];
      const double factor = join_factor(ms.w, ms.v, d);
      for (int j = 1; j <= pi.phases; ++j) out.busy[pi.index(k, ell, j)] = pi.at(k, ell, j) * factor;
    }
  return out;
}

inline JoinLaw join_law(const CavityDistribution& pi, const Policy& policy, const LayerGrid& grid, int d,
                        const PhaseType* job_size = nullptr) {
  return join_law(pi, StateOrdering(ScoreTable(policy, grid, job_size), pi.buffer), d);
}

inline constexpr double kJoinTruncationGuard = 1e-8;

/// Survival curves of the remaining work ahead of a tagged job. Block b of the
/// chain holds b jobs still to be served; a completion in block b restarts in
/// block b-1 with phases drawn from alpha, and block 1 completion absorbs.
/// Starting in block ell at phase j gives X_{ell,j}, the residual of a job in
/// phase j plus ell-1 fresh jobs.
class WorkloadChain {
 public:
  WorkloadChain(const PhaseType& ph, int blocks)
      : A_(ph.generator()), mu_(ph.exit_rates()), alpha_(ph.alpha()), m_(ph.order()), blocks_(blocks),
        q_(numerics::uniformization_rate(ph.generator())) {}

  int blocks() const noexcept { return blocks_; }
  int phases() const noexcept { return m_; }
  double rate() const noexcept { return q_; }

  /// out = x (I + C/q).
  void row_step(const RowVector& x, RowVector& out) const {
    out.resize(x.size());
    for (int b = 0; b < blocks_; ++b) {
      auto xb = x.segment(b * m_, m_);
      auto o = out.segment(b * m_, m_);
      o.noalias() = xb * A_;
      if (b + 1 < blocks_) {
        const double done = x.segment((b + 1) * m_, m_).dot(mu_.transpose());
        o += done * alpha_.transpose();
      }
      o = xb + o / q_;
    }
  }

  /// x e^{C t}.
  RowVector advance(const RowVector& x, double t) const {
    auto step = [this](const RowVector& in, RowVector& out) { row_step(in, out); };
    return numerics::propagate<RowVector>(x, q_, t, step).value;
  }

 private:
  Matrix A_;
  Vector mu_;
  Vector alpha_;
  int m_;
  int blocks_;
  double q_;
};

namespace detail {

inline void check_join_truncation(const JoinLaw& join) {
  double tail = 0.0;
  for (int k = 1; k <= join.layers; ++k)
    for (int j = 1; j <= join.phases; ++j) tail += join.at(k, join.buffer, j);
  if (tail > kJoinTruncationGuard) {
    throw Error("waiting time tail: join mass " + std::to_string(tail) + " at the buffer limit exceeds 1e-8");
  }
}

/// Initial row vector for the waiting (shift 0) or response (shift 1) chain.
inline RowVector workload_start(const JoinLaw& join, const PhaseType& ph, bool response) {
  const int m = join.phases;
  const int blocks = join.buffer + 1;
  RowVector x = RowVector::Zero(static_cast<Eigen::Index>(blocks) * m);
  const auto J = join.by_length_phase();
  const int shift = response ? 1 : 0;
  for (int ell = 1; ell <= join.buffer; ++ell)
    for (int j = 1; j <= m; ++j)
      x[(ell - 1 + shift) * m + (j - 1)] = J[static_cast<std::size_t>(ell - 1) * m + static_cast<std::size_t>(j - 1)];
  if (response) x.segment(0, m) += join.idle * ph.alpha().transpose();
  return x;
}

}  // namespace detail

/// Pr{W > w} = sum_{ell,j} J_{ell,j} Pr{X_{ell,j} > w}, one value per w.
inline std::vector<double> waiting_survival(const JoinLaw& join, const PhaseType& ph, const std::vector<double>& ws) {
  detail::check_join_truncation(join);
  const WorkloadChain chain(ph, join.buffer + 1);
  std::vector<std::size_t> order(ws.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&ws](auto a, auto b) { return ws[a] < ws[b]; });
  std::vector<double> out(ws.size());
  RowVector x = detail::workload_start(join, ph, false);
  double t = 0.0;
  for (auto i : order) {
    if (!(ws[i] >= 0.0)) throw std::domain_error("waiting_survival: w must be >= 0");
    x = chain.advance(x, ws[i] - t);
    t = ws[i];
    out[i] = std::clamp(x.sum(), 0.0, 1.0);
  }
  return out;
}

inline double waiting_survival(const JoinLaw& join, const PhaseType& ph, double w) {
  return waiting_survival(join, ph, std::vector<double>{w}).front();
}

/// Pr{R > w}: ell jobs ahead plus the job itself, and idle joins start service
/// at once.
inline std::vector<double> response_survival(const JoinLaw& join, const PhaseType& ph, const std::vector<double>& ws) {
  detail::check_join_truncation(join);
  const WorkloadChain chain(ph, join.buffer + 1);
  std::vector<std::size_t> order(ws.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&ws](auto a, auto b) { return ws[a] < ws[b]; });
  std::vector<double> out(ws.size());
  RowVector x = detail::workload_start(join, ph, true);
  double t = 0.0;
  for (auto i : order) {
    if (!(ws[i] >= 0.0)) throw std::domain_error("response_survival: w must be >= 0");
    x = chain.advance(x, ws[i] - t);
    t = ws[i];
    out[i] = std::clamp(x.sum(), 0.0, 1.0);
  }
  return out;
}

inline double response_survival(const JoinLaw& join, const PhaseType& ph, double w) {
  return response_survival(join, ph, std::vector<double>{w}).front();
}

/// int_0^inf Pr{W > w} dw by adaptive Gauss-Kronrod on consecutive segments,
/// stopping once the survival drops below `cutoff`.
inline double integrate_survival(const JoinLaw& join, const PhaseType& ph, bool response, double cutoff = 1e-10) {
  detail::check_join_truncation(join);
  const WorkloadChain chain(ph, join.buffer + 1);
  // Segments short enough that each node needs only a few uniformization terms.
  const double h = chain.rate() > 0 ? 4.0 / chain.rate() : 1.0;
  RowVector x = detail::workload_start(join, ph, response);
  double total = 0.0;
  for (int seg = 0; seg < 1000000 && x.sum() > cutoff; ++seg) {
    auto f = [&](double tau) { return chain.advance(x, tau).sum(); };
    total += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, 0.0, h, 8, 1e-12);
    x = chain.advance(x, h);
  }
  return total;
}

/// (E[W^SQ] - E[W^P]) / E[W^SQ].
inline double relative_improvement(double ew_baseline, double ew_policy) {
  if (!(ew_baseline > 0.0)) throw std::domain_error("relative_improvement: baseline must be positive");
  return (ew_baseline - ew_policy) / ew_baseline;
}

/// Expected number of sampled servers that share the minimum queue length,
/// given all d are busy: sum_k k sum_ell p_{ell,k} / u_1^d with
/// p_{ell,k} = C(d,k)(u_ell - u_{ell+1})^k u_{ell+1}^{d-k}. `u[ell]` is
/// Pr{length >= ell}; u[0] is ignored and missing entries count as 0.
inline double tie_expectation(const std::vector<double>& u, int d) {
  if (d < 1) throw std::invalid_argument("tie_expectation: d must be >= 1");
  if (u.size() < 2 || !(u[1] > 0.0)) throw std::domain_error("tie_expectation: need u_1 > 0");
  auto at = [&u](std::size_t ell) { return ell < u.size() ? u[ell] : 0.0; };
  double num = 0.0;
  for (std::size_t ell = 1; ell < u.size(); ++ell) {
    const double exact = std::max(at(ell) - at(ell + 1), 0.0);
    const double above = at(ell + 1);
    double binom = 1.0;
    for (int k = 1; k <= d; ++k) {
      binom = binom * (d - k + 1) / k;
      num += k * binom * std::pow(exact, k) * std::pow(above, d - k);
    }
  }
  return num / std::pow(u[1], d);
}

}  // namespace lbast
