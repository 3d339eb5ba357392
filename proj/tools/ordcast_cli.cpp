// Command-line front end: one subcommand per pipeline stage.
#include <iostream>

#include <CLI11.hpp>

#include "ordcast/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ordcast: probabilistic precipitation nowcasting pipeline"};
  app.require_subcommand(1);

  ordcast::RunOptions opt;
  opt.log = &std::cerr;
  std::string config;
  std::string out = "run";
  std::uint64_t seed = 0;
  bool quiet = false;

  for (const auto& stage : ordcast::pipeline_stages()) {
    auto* sub = app.add_subcommand(stage, "run the '" + stage + "' stage");
    sub->add_option("--config", config, "run configuration (JSON)")->required();
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_flag("--force", opt.force, "ignore config-hash mismatches");
    sub->add_flag("--quiet", quiet, "suppress progress messages");
    if (stage == "predict" || stage == "eval")
      sub->add_option("--model", opt.model, "micromodel | persistence | advection")
          ->check(CLI::IsMember({"micromodel", "persistence", "advection"}))
          ->capture_default_str();
    if (stage == "eval" || stage == "report")
      sub->add_flag("--plot-data", opt.plot_data, "also write plot-ready CSV");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ordcast::kExitFailure;
  }

  auto* sub = app.get_subcommands().front();
  opt.config = config;
  opt.out = out;
  if (sub->count("--seed")) opt.seed = seed;
  if (quiet) opt.log = nullptr;
  return ordcast::run_stage_status(sub->get_name(), opt);
}
