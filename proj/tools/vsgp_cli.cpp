#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vsgp/config.hpp"
#include "vsgp/pipeline.hpp"

namespace {

struct UnitOptions {
  std::string config;
  std::string out;
  int split = 0;
  int inducing = 0;
  std::string strategy;
};

void add_unit_options(CLI::App* cmd, UnitOptions& o) {
  cmd->add_option("-c,--config", o.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.out, "run directory (defaults to the config's output)");
  cmd->add_option("--split", o.split, "split repetition index")->check(CLI::NonNegativeNumber);
  cmd->add_option("--inducing", o.inducing, "number of inducing points (defaults to the first configured)");
  cmd->add_option("--strategy", o.strategy, "inducing strategy: vb-optimized or kmeans-fixed")
      ->check(CLI::IsMember({"vb-optimized", "kmeans-fixed"}));
}

vsgp::ExperimentConfig load(const UnitOptions& o) {
  try {
    vsgp::ExperimentConfig c = vsgp::load_config(o.config);
    if (!o.out.empty()) c.output = o.out;
    c.validate();
    return c;
  } catch (const std::exception& e) {
    throw vsgp::PipelineError(vsgp::Stage::Config, e.what());
  }
}

vsgp::UnitSpec select_unit(const vsgp::ExperimentConfig& c, const UnitOptions& o) {
  const int m = o.inducing > 0 ? o.inducing : c.inducing.counts.front();
  auto strategy = c.inducing.strategies.front();
  if (o.strategy == "vb-optimized") strategy = vsgp::InducingStrategy::VbOptimized;
  if (o.strategy == "kmeans-fixed") strategy = vsgp::InducingStrategy::KmeansFixed;
  for (const auto& u : vsgp::plan_units(c, c.output)) {
    if (u.repetition == o.split && u.num_inducing == m && u.strategy == strategy) return u;
  }
  vsgp::UnitSpec u = vsgp::plan_units(c, c.output).front();
  u.repetition = o.split;
  u.num_inducing = m;
  u.strategy = strategy;
  u.dir = c.output / ((strategy == vsgp::InducingStrategy::VbOptimized ? "vb-optimized_M" : "kmeans-fixed_M") +
                      std::to_string(m)) /
          ("split_" + std::to_string(o.split));
  if (c.split && o.split >= c.split->repetitions) {
    throw vsgp::PipelineError(vsgp::Stage::Config, "split index beyond configured repetitions");
  }
  return u;
}

template <typename Stage>
void run_unit_stage(const UnitOptions& o, Stage stage) {
  const vsgp::ExperimentConfig c = load(o);
  vsgp::PreparedData prepared;
  try {
    prepared = vsgp::prepare_data(c);
  } catch (const std::exception& e) {
    throw vsgp::PipelineError(vsgp::Stage::Data, e.what());
  }
  const vsgp::UnitSpec unit = select_unit(c, o);
  vsgp::RunLock lock(unit.dir);
  vsgp::UnitRunner runner(c, prepared, unit);
  stage(runner);
  std::cout << unit.dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse variational Gaussian processes with MCMC over the free-form posterior"};
  app.require_subcommand(1);

  UnitOptions fit_o, tune_o, sample_o, gibbs_o, predict_o, diagnose_o;
  auto* fit_cmd = app.add_subcommand("fit-vb", "fit the Gaussian approximation and write a checkpoint");
  add_unit_options(fit_cmd, fit_o);
  auto* tune_cmd = app.add_subcommand("tune", "tune HMC step size and trajectory cap from a checkpoint");
  add_unit_options(tune_cmd, tune_o);
  auto* sample_cmd = app.add_subcommand("sample", "run tuned HMC chains over (v, theta)");
  add_unit_options(sample_cmd, sample_o);
  auto* gibbs_cmd = app.add_subcommand("gibbs", "tune and run the Gibbs baseline");
  add_unit_options(gibbs_cmd, gibbs_o);
  auto* predict_cmd = app.add_subcommand("predict", "predict and score from the checkpoint and chains");
  add_unit_options(predict_cmd, predict_o);
  auto* diagnose_cmd = app.add_subcommand("diagnose", "ESS, TN-ESS and PSRF for the unit's chains");
  add_unit_options(diagnose_cmd, diagnose_o);

  std::string run_config, run_out;
  auto* run_cmd = app.add_subcommand("run", "full pipeline over every split and inducing setting");
  run_cmd->add_option("-c,--config", run_config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("-o,--out", run_out, "run directory (defaults to the config's output)");

  std::string emit_dir;
  auto* emit_cmd = app.add_subcommand("emit-plots", "write plot-ready tables for a finished run");
  emit_cmd->add_option("dir", emit_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_cmd) run_unit_stage(fit_o, [](vsgp::UnitRunner& r) { r.fit_vb(); });
    if (*tune_cmd) run_unit_stage(tune_o, [](vsgp::UnitRunner& r) { r.tune(); });
    if (*sample_cmd) run_unit_stage(sample_o, [](vsgp::UnitRunner& r) { r.sample(); });
    if (*gibbs_cmd) run_unit_stage(gibbs_o, [](vsgp::UnitRunner& r) { r.gibbs(); });
    if (*predict_cmd) run_unit_stage(predict_o, [](vsgp::UnitRunner& r) { r.predict(); });
    if (*diagnose_cmd) run_unit_stage(diagnose_o, [](vsgp::UnitRunner& r) { r.diagnose(); });
    if (*run_cmd) {
      UnitOptions o{run_config, run_out, 0, 0, ""};
      const vsgp::ExperimentConfig c = load(o);
      std::cout << vsgp::run_pipeline(c).string() << '\n';
    }
    if (*emit_cmd) {
      vsgp::emit_plot_data(emit_dir);
      std::cout << (std::filesystem::path(emit_dir) / "plots").string() << '\n';
    }
  } catch (const vsgp::PipelineError& e) {
    std::cerr << "error [" << e.what() << "]\n";
    return static_cast<int>(e.stage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
