#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "lmm/experiment.hpp"

namespace {

lmm::ExperimentConfig load(const std::string &file, std::optional<std::uint64_t> seed) {
  lmm::ExperimentConfig cfg = lmm::load_config(file);
  if (seed)
    cfg.seeds = {*seed};
  return cfg;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Levenberg-Morrison-Marquardt experiments"};
  app.require_subcommand(1);

  int threads = int(std::max(1u, std::thread::hardware_concurrency()));
  std::optional<std::uint64_t> seed;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "replace the config's seed list with this seed");

  std::string config, out, filter = "*";
  auto *run = app.add_subcommand("run", "run each solver on each seed, one CSV trace per run");
  run->add_option("--config", config, "JSON experiment config")->required();
  run->add_option("--out", out, "output directory (default: the config's output_dir)");

  auto *transition = app.add_subcommand("transition", "success rates over an (m, p_fail) grid");
  transition->add_option("--config", config, "JSON experiment config")->required();
  transition->add_option("--out", out, "output directory");

  auto *sensitivity =
      app.add_subcommand("sensitivity", "iteration counts over a (q, gamma) grid");
  sensitivity->add_option("--config", config, "JSON experiment config")->required();
  sensitivity->add_option("--out", out, "output directory");

  auto *verify = app.add_subcommand("verify", "numerical checks of the Jacobian kernels");
  verify->add_option("--filter", filter, "glob over check names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed())
      return lmm::cmd_verify(std::cout, filter) == 0 ? 0 : 1;

    const lmm::ExperimentConfig cfg = load(config, seed);
    const std::string dir = out.empty() ? cfg.output_dir : out;
    if (run->parsed()) {
      for (const auto &f : lmm::cmd_run(cfg, dir, threads))
        std::cout << f.string() << '\n';
    } else if (transition->parsed()) {
      std::cout << lmm::cmd_transition(cfg, dir, threads).string() << '\n';
    } else if (sensitivity->parsed()) {
      std::cout << lmm::cmd_sensitivity(cfg, dir, threads).string() << '\n';
    }
  } catch (const lmm::ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
