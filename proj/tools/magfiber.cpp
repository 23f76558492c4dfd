#include "magfiber/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char **argv) {
  CLI::App app{"Dispersion curves, thresholds, group velocities and wave packets of "
               "translation-invariant magnetic fibers"};
  app.set_version_flag("--version", std::string("magfiber ") + magfiber::kToolVersion);
  magfiber::CliOptions opts;
  std::string config;
  std::string out;
  app.add_option("command", opts.command,
                 "dispersion | thresholds | velocity | minima | evolve (default: the "
                 "config's \"command\")")
      ->check(CLI::IsMember({"dispersion", "thresholds", "velocity", "minima", "evolve"}));
  app.add_option("--config", config, "run configuration (JSON)")->required();
  app.add_option("--out", out, "output directory (overrides output_dir)");
  app.add_flag("--plots", opts.plots, "also write gnuplot scripts");
  app.add_option("--threads", opts.threads, "worker threads for fiber solves")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", opts.verbose, "progress on standard output");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0)
      return app.exit(e);
    magfiber::report_error(std::cerr, magfiber::ErrorKind::config, e.what(), 2);
    return 2;
  }
  opts.config = config;
  if (!out.empty())
    opts.out = out;
  return magfiber::run_cli(opts, std::cout, std::cerr);
}
