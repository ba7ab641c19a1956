// bdcfm: simulate panels, fit the dynamic clustering factor model, summarize chains.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bdcfm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian dynamic clustering factor model"};
  app.set_version_flag("--version", std::string(bdcfm::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out, data, truth, chains;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--out", out, "output directory");
  };
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic panel and its ground truth");
  add_common(sim);
  sim->add_option("--data", data, "where to write the panel CSV");
  sim->add_option("--truth", truth, "where to write the truth JSON");
  CLI::App* fit = app.add_subcommand("fit", "run the Gibbs sampler on a panel CSV");
  add_common(fit);
  fit->add_option("--data", data, "panel CSV (subject,time,<variables>)");
  CLI::App* sum = app.add_subcommand("summarize", "posterior summaries and truth comparisons");
  add_common(sum);
  sum->add_option("--chains", chains, "chain directory written by fit (default: --out)");
  sum->add_option("--truth", truth, "truth JSON for coverage and misclassification");

  CLI11_PARSE(app, argc, argv);

  bdcfm::RunConfig cfg;
  try {
    if (!config_path.empty()) bdcfm::apply_config(cfg, bdcfm::read_config_file(config_path));
  } catch (const bdcfm::Error& e) {
    std::cerr << bdcfm::json{{"error", std::string(bdcfm::to_string(e.code()))}, {"message", e.detail()}}.dump()
              << '\n';
    return 2;
  }
  if (sim->parsed()) cfg.mode = bdcfm::Mode::Simulate;
  if (fit->parsed()) cfg.mode = bdcfm::Mode::Fit;
  if (sum->parsed()) cfg.mode = bdcfm::Mode::Summarize;
  if (seed) cfg.sampler.seed = *seed;
  if (!out.empty()) cfg.out = out;
  if (!data.empty()) cfg.data = data;
  if (!truth.empty()) cfg.truth = truth;
  if (!chains.empty()) cfg.chains = chains;
  return bdcfm::run_command(cfg, std::cout, std::cerr);
}
