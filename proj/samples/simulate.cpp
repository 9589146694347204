// Cavity prediction versus a finite system of N servers for SQ(2)-RTB.

#include <cstdio>

#include "lbast/cavity.hpp"
#include "lbast/metrics.hpp"
#include "lbast/simulator.hpp"

int main() {
  using namespace lbast;
  const PhaseType ph = fit_merlang(10.0, 0.5, 1);
  const Policy policy = Policy::sq_rtb();
  const LayerGrid grid = grid_for(policy, ph, 0.1);
  const double load = 0.8;
  const int d = 2;

  const auto res = fixed_point(policy, load, ph, grid, d);
  std::printf("cavity      E[W] = %.4f\n", mean_metrics(res.pi, load).ew);

  for (int n : {10, 100, 1000}) {
    SimConfig cfg;
    cfg.servers = n;
    cfg.load = load;
    cfg.d = d;
    cfg.policy = policy;
    cfg.grid = grid;
    cfg.job_size = ph;
    cfg.horizon = 2e5 / n;
    cfg.runs = 8;
    const auto stats = run_experiment(cfg);
    std::printf("N = %-6d  E[W] = %.4f +- %.4f\n", n, stats.mean.mean_wait, stats.sd.mean_wait);
  }
}
