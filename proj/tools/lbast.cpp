#include <iostream>

#include "lbast/cli.hpp"

int main(int argc, char** argv) {
  lbast::cli::Options options;
  auto app = lbast::cli::make_app(options);
  CLI11_PARSE(*app, argc, argv);
  try {
    const auto cfg = lbast::cli::finish(options, *app);
    const auto rows = lbast::cli::run(cfg, &std::cerr);
    lbast::cli::write_outputs(cfg, rows, std::cout);
  } catch (const lbast::NonConvergence& e) {
    std::cerr << "error: " << e.what() << "\nresidual history:";
    for (double r : e.history()) std::cerr << ' ' << r;
    std::cerr << '\n';
    return 2;
  } catch (const lbast::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
