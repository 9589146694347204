#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lbast/cavity.hpp"
#include "lbast/metrics.hpp"
#include "support.hpp"

using namespace lbast;

namespace {

ArrivalRateTable random_rates(int layers, int buffer, std::mt19937_64& rng, double max_rate = 2.0) {
  std::uniform_real_distribution<double> u(0.0, max_rate);
  ArrivalRateTable r(layers, buffer);
  r.idle = u(rng);
  for (int k = 1; k <= layers; ++k)
    for (int ell = 1; ell <= buffer; ++ell) r.set(k, ell, u(rng));
  return r;
}

ArrivalRateTable constant_rates(int layers, int buffer, double rate) {
  ArrivalRateTable r(layers, buffer);
  for (int k = 1; k <= layers; ++k)
    for (int ell = 1; ell <= buffer; ++ell) r.set(k, ell, rate);
  return r;
}

/// Embedded chain assembled as one matrix: block k observes the server at
/// the start of layer k+1 (block 0: service start).
Matrix explicit_dtmc(const DtmcBlocks& b) {
  const int n = b.buffer * b.phases;
  const int L = b.layers;
  Matrix P = Matrix::Zero(L * n, L * n);
  for (int k = 0; k < L; ++k) {
    P.block(k * n, 0, n, n) += b.Psi[static_cast<std::size_t>(k)] * b.G;
    if (k + 1 < L) P.block(k * n, (k + 1) * n, n, n) = b.Lambda[static_cast<std::size_t>(k)];
  }
  return P;
}

double sq_tail(double load, int d, int ell) {
  return std::pow(load, (std::pow(d, ell) - 1.0) / (d - 1.0));
}

}  // namespace

TEST(BuildBlocks, TwoStateHandComputation) {
  const double lam = 0.6;
  ArrivalRateTable rates(1, 2);
  rates.set(1, 1, lam);
  const auto b = build_blocks(rates, exponential(1.0), LayerGrid());
  Matrix psi(2, 2);
  psi << 1 / (1 + lam), lam / (1 + lam), 0, 1;
  EXPECT_LT((b.Psi[0] - psi).cwiseAbs().maxCoeff(), 1e-14);
  Matrix omega(2, 2);
  omega << 1, 0, 1, 0;
  EXPECT_LT((b.Omega[0] - omega).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(b.Lambda[0].cwiseAbs().maxCoeff(), 1e-300);

  const auto pi_hat = dtmc_steady(b);
  EXPECT_NEAR(pi_hat[0][0], 1.0, 1e-14);
  EXPECT_NEAR(pi_hat[0][1], 0.0, 1e-14);
  const auto busy = busy_censor(pi_hat, b);
  EXPECT_NEAR(busy[0], 1 / (1 + lam), 1e-14);
  EXPECT_NEAR(busy[1], lam / (1 + lam), 1e-14);
}

TEST(BuildBlocks, OmegaStochasticAndLambdaSubstochastic) {
  std::mt19937_64 rng(1);
  const PhaseType ph = fit_merlang(10, 0.5, 2);
  const auto grid = LayerGrid::uniform(0.3, 5);
  const auto rates = random_rates(grid.layers(), 6, rng);
  const auto b = build_blocks(rates, ph, grid);
  EXPECT_LT((b.Omega[0].rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-10);
  for (const auto& L : b.Lambda) {
    EXPECT_GE(L.minCoeff(), 0.0);
    EXPECT_LE(L.rowwise().sum().maxCoeff(), 1.0 + 1e-12);
  }
  EXPECT_LT(b.Lambda.back().cwiseAbs().maxCoeff(), 1e-300);
  EXPECT_LT((b.Psi.back() - (-b.F.back()).inverse()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BuildBlocks, NoBirthsIsBlockDiagonal) {
  const PhaseType ph = fit_merlang(5, 0.5, 1);
  const auto grid = LayerGrid::uniform(0.5, 2);
  const auto b = build_blocks(ArrivalRateTable(grid.layers(), 3), ph, grid);
  const int m = ph.order();
  for (int k = 0; k < grid.layers(); ++k) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const Matrix blockF = b.F[static_cast<std::size_t>(k)].block(i * m, j * m, m, m);
        const Matrix blockL = b.Lambda[static_cast<std::size_t>(k)].block(i * m, j * m, m, m);
        if (i == j) {
          EXPECT_LT((blockF - ph.generator()).cwiseAbs().maxCoeff(), 1e-15);
        } else {
          EXPECT_EQ(blockF.cwiseAbs().maxCoeff(), 0.0);
          EXPECT_EQ(blockL.cwiseAbs().maxCoeff(), 0.0);
        }
      }
  }
}

TEST(DtmcSteady, NoArrivalsRestartsAtLengthOneWithAlpha) {
  const PhaseType ph = fit_merlang(10, 0.3, 1);
  const auto grid = LayerGrid::uniform(0.5, 3);
  const auto b = build_blocks(ArrivalRateTable(grid.layers(), 4), ph, grid);
  const auto pi_hat = dtmc_steady(b);
  const RowVector& start = pi_hat[0];
  const double s = start.sum();
  EXPECT_NEAR(start[0] / s, ph.alpha()[0], 1e-12);
  EXPECT_NEAR(start[1] / s, ph.alpha()[1], 1e-12);
  EXPECT_NEAR(start.tail(start.size() - 2).cwiseAbs().sum(), 0.0, 1e-14);
  const auto busy = busy_censor(pi_hat, b);
  CavityDistribution pi = assemble(busy, 0.5, grid.layers(), 4, ph.order());
  EXPECT_NEAR(pi.queue_mass(1), 0.5, 1e-12);
}

TEST(DtmcSteady, MatchesExplicitChain) {
  std::mt19937_64 rng(2);
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto grid = LayerGrid::uniform(0.5, 3);
  const auto b = build_blocks(random_rates(grid.layers(), 4, rng), ph, grid);
  const auto pi_hat = dtmc_steady(b);
  const Matrix P = explicit_dtmc(b);
  RowVector joined(P.rows());
  const int n = b.buffer * b.phases;
  for (int k = 0; k < b.layers; ++k) joined.segment(k * n, n) = pi_hat[static_cast<std::size_t>(k)];
  EXPECT_NEAR(joined.sum(), 1.0, 1e-12);
  EXPECT_LT((joined * P - joined).lpNorm<1>(), 1e-9);
  EXPECT_LT((joined - lbast::test::linear_stationary(P)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BusyCensor, LightTrafficStartsNearAlpha) {
  const PhaseType ph = fit_merlang(10, 0.25, 1);
  const LayerGrid grid({1e-3, 1.0});
  const auto b = build_blocks(constant_rates(grid.layers(), 3, 1e-9), ph, grid);
  const auto busy = busy_censor(dtmc_steady(b), b);
  CavityDistribution pi = assemble(busy, 0.5, grid.layers(), 3, ph.order());
  const double x11 = pi.marginal(1, 1);
  for (int j = 1; j <= ph.order(); ++j) EXPECT_NEAR(pi.at(1, 1, j) / x11, ph.alpha()[j - 1], 1e-2);
}

TEST(FastRoute, AgreesWithDenseRoute) {
  std::mt19937_64 rng(3);
  struct Case {
    PhaseType ph;
    LayerGrid grid;
    int buffer;
  };
  const std::vector<Case> cases = {
      {exponential(1.0), LayerGrid(), 6},
      {fit_merlang(10, 0.5, 1), LayerGrid::uniform(0.1, 8), 5},
      {fit_merlang(20, 2.0 / 3.0, 3), LayerGrid({0.2, 0.9, 2.5}), 7},
      {fit_merlang(5, 0.2, 2), LayerGrid({2.0}), 9},
  };
  for (const auto& c : cases) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto rates = random_rates(c.grid.layers(), c.buffer, rng, 3.0);
      const auto b = build_blocks(rates, c.ph, c.grid);
      const auto dense = busy_censor(dtmc_steady(b), b);
      const auto fast = censored_busy_probabilities(rates, c.ph, c.grid);
      ASSERT_EQ(dense.size(), fast.size());
      double diff = 0.0;
      for (std::size_t i = 0; i < dense.size(); ++i) diff += std::abs(dense[i] - fast[i]);
      EXPECT_LT(diff, 1e-10);
    }
  }
}

TEST(Assemble, IdleAndBusyMass) {
  const std::vector<double> busy = {0.25, 0.25, 0.5};
  const auto p0 = assemble(busy, 0.0, 1, 3, 1);
  EXPECT_DOUBLE_EQ(p0.idle, 1.0);
  const auto p8 = assemble(busy, 0.8, 1, 3, 1);
  EXPECT_NEAR(p8.busy_mass(), 0.8, 1e-15);
  EXPECT_NEAR(p8.total(), 1.0, 1e-15);
  EXPECT_THROW(assemble(busy, 1.0, 1, 3, 1), std::domain_error);
}

TEST(ArrivalRates, RandomPolicyIsFlat) {
  CavityDistribution pi(1, 3, 1);
  pi.idle = 0.4;
  pi.busy = {0.3, 0.2, 0.1};
  const auto r = arrival_rates(pi, Policy::random(), LayerGrid(), 4, 0.6);
  EXPECT_NEAR(r.idle, 0.6, 1e-14);
  EXPECT_NEAR(r.at(1, 1), 0.6, 1e-14);
  EXPECT_NEAR(r.at(1, 2), 0.6, 1e-14);
  EXPECT_EQ(r.at(1, 3), 0.0);
}

TEST(ArrivalRates, SingleChoiceIsFlat) {
  CavityDistribution pi(3, 2, 1);
  pi.idle = 0.5;
  pi.busy = {0.1, 0.1, 0.05, 0.05, 0.15, 0.05};
  const auto grid = LayerGrid::uniform(0.5, 2);
  const PhaseType ph = exponential(1.0);
  for (const auto& pol : {Policy::sq(), Policy::sq_rtb(), Policy::las(), Policy::lew()}) {
    const auto r = arrival_rates(pi, pol, grid, 1, 0.5, &ph);
    EXPECT_NEAR(r.idle, 0.5, 1e-14);
    for (int k = 1; k <= 3; ++k) EXPECT_NEAR(r.at(k, 1), 0.5, 1e-14) << to_string(pol);
  }
}

TEST(ArrivalRates, SqTwoChoicesEnumeration) {
  CavityDistribution pi(1, 3, 1);
  pi.idle = 0.5;
  pi.busy = {0.3, 0.2, 0.0};
  const double lam = 0.7;
  const auto r = arrival_rates(pi, Policy::sq(), LayerGrid(), 2, lam);
  EXPECT_NEAR(r.at(1, 1), 0.7 * lam, 1e-14);
  // Idle: wins against every busy opponent, splits against idle.
  EXPECT_NEAR(r.idle, lam * 2 * (0.5 / 2 + 0.5), 1e-14);
  // ell = 2: wins only ties with itself.
  EXPECT_NEAR(r.at(1, 2), lam * 2 * (0.2 / 2), 1e-14);
}

TEST(ArrivalRates, BoundedByPotentialRate) {
  std::mt19937_64 rng(4);
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto grid = LayerGrid::uniform(0.5, 4);
  CavityDistribution pi(grid.layers(), 5, ph.order());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double s = 0.3;
  for (auto& v : pi.busy) s += (v = u(rng));
  pi.idle = 0.3 / s;
  for (auto& v : pi.busy) v /= s;
  for (const auto& pol : {Policy::sq(), Policy::sq_rtb(), Policy::las(), Policy::las_qtb(), Policy::lew()}) {
    for (int d : {2, 5}) {
      const auto r = arrival_rates(pi, pol, grid, d, 0.9, &ph);
      for (double v : r.busy) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 0.9 * d + 1e-12);
      }
      const StateOrdering ord(ScoreTable(pol, grid, &ph), pi.buffer);
      EXPECT_NEAR(offered_flow(pi, ord, d, 0.9), 0.9, 1e-12) << to_string(pol);
    }
  }
}

TEST(JoinFactor, EdgeCases) {
  EXPECT_NEAR(join_factor(0.0, 0.4, 3), 3 * 0.16, 1e-15);
  EXPECT_NEAR(join_factor(1.0, 0.0, 4), 1.0, 1e-15);
  // (u^d - v^d) / w with u = v + w.
  EXPECT_NEAR(join_factor(0.2, 0.5, 5), (std::pow(0.7, 5) - std::pow(0.5, 5)) / 0.2, 1e-13);
}

TEST(FixedPoint, SqExponentialClosedForm) {
  for (int d : {2, 3, 5})
    for (double load : {0.5, 0.8, 0.95}) {
      const auto res = fixed_point(Policy::sq(), load, exponential(1.0), LayerGrid(), d);
      const auto u = res.pi.queue_tail();
      for (int ell = 1; ell <= 8 && ell < static_cast<int>(u.size()); ++ell)
        EXPECT_NEAR(u[static_cast<std::size_t>(ell)], sq_tail(load, d, ell), 1e-8) << d << " " << load << " " << ell;
    }
}

TEST(FixedPoint, ZeroLoad) {
  const auto res = fixed_point(Policy::sq_rtb(), 0.0, fit_merlang(10, 0.5, 1), LayerGrid::uniform(0.1, 10), 3);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_DOUBLE_EQ(res.pi.idle, 1.0);
  EXPECT_EQ(mean_metrics(res.pi, 0.0).ew, 0.0);
}

TEST(FixedPoint, Identities) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const double load = 0.8;
  const int d = 5;
  for (const auto& pol : {Policy::sq(), Policy::sq_rtb(), Policy::sq_re(2.0), Policy::sq_rtb_re(2.0), Policy::las(),
                          Policy::las_qtb(), Policy::re(2.0), Policy::lew()}) {
    const auto grid = grid_for(pol, ph, 0.1, 60);
    const auto res = fixed_point(pol, load, ph, grid, d);
    EXPECT_NEAR(res.pi.idle, 1 - load, 1e-8) << to_string(pol);
    EXPECT_NEAR(res.pi.total(), 1.0, 1e-10) << to_string(pol);
    for (double v : res.rates.busy) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, load * d + 1e-12);
    }
    const StateOrdering ord(ScoreTable(pol, grid, &ph), res.pi.buffer);
    EXPECT_NEAR(offered_flow(res.pi, ord, d, load), load, 1e-8) << to_string(pol);
    EXPECT_LT(res.residuals.back(), 1e-10);
    EXPECT_FALSE(res.buffer_capped);
  }
}

TEST(FixedPoint, BufferInsensitivity) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto grid = LayerGrid::uniform(0.1, 60);
  const auto a = fixed_point(Policy::sq_rtb(), 0.9, ph, grid, 3);
  SolverOptions wide;
  wide.tail_mass = 1e-18;
  wide.initial_buffer = a.pi.buffer + 10;
  const auto b = fixed_point(Policy::sq_rtb(), 0.9, ph, grid, 3, wide);
  EXPECT_GT(b.pi.buffer, a.pi.buffer);
  EXPECT_NEAR(mean_metrics(a.pi, 0.9).ew, mean_metrics(b.pi, 0.9).ew, 1e-6);
}

TEST(FixedPoint, LasQtbOneLayerEqualsSqRe) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const LayerGrid grid({2.0});
  const auto a = fixed_point(Policy::las_qtb(), 0.8, ph, grid, 5);
  const auto b = fixed_point(Policy::sq_re(2.0), 0.8, ph, grid, 5);
  ASSERT_EQ(a.pi.buffer, b.pi.buffer);
  EXPECT_LT(l1_distance(a.pi, b.pi), 1e-8);
}

TEST(FixedPoint, GeometricConvergence) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  for (const auto& pol : {Policy::sq_rtb(), Policy::las(), Policy::lew()}) {
    const auto res = fixed_point(pol, 0.8, ph, grid_for(pol, ph, 0.1), 5);
    EXPECT_LT(res.iterations, 50) << to_string(pol);
    EXPECT_FALSE(res.damped);
  }
}

TEST(FixedPoint, NonConvergenceCarriesHistory) {
  SolverOptions opts;
  opts.max_iterations = 3;
  try {
    fixed_point(Policy::sq(), 0.9, fit_merlang(10, 0.5, 1), LayerGrid(), 2, opts);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_EQ(e.history().size(), 3u);
  }
}

TEST(FixedPoint, RejectsBadInputs) {
  EXPECT_THROW(fixed_point(Policy::sq(), 1.0, exponential(1.0), LayerGrid(), 2), std::domain_error);
  EXPECT_THROW(fixed_point(Policy::sq(), 0.5, exponential(2.0), LayerGrid(), 2), InvalidDistribution);
}

TEST(FixedPoint, SqRtbReferenceConfiguration) {
  const PhaseType ph = fit_merlang(10, 0.5, 2);
  const auto pol = Policy::sq_rtb();
  const auto res = fixed_point(pol, 0.7, ph, grid_for(pol, ph, 0.01), 3);
  EXPECT_NEAR(mean_metrics(res.pi, 0.7).ew, 0.9172, 2e-3);
}
