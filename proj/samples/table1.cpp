// Solves the seven reference configurations and prints E[W] next to the
// reference values.

#include <cstdio>

#include "lbast/cli.hpp"

int main() {
  using namespace lbast;
  std::printf("%-14s %3s %5s %12s %10s %9s\n", "policy", "d", "load", "E[W]", "reference", "iters");
  for (const auto& e : cli::table1_entries()) {
    const auto point = cli::table1_point(e);
    const PhaseType ph = fit_merlang(e.scv, e.f, e.k);
    const LayerGrid grid = grid_for(point.policy, ph, e.delta);
    const auto res = fixed_point(point.policy, e.lambda, ph, grid, e.d);
    std::printf("%-14s %3d %5.2f %12.6f %10.4f %9d\n", e.policy, e.d, e.lambda, mean_metrics(res.pi, e.lambda).ew,
                e.reference, res.iterations);
  }
}
