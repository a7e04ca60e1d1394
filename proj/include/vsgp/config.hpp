#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsgp/data.hpp"
#include "vsgp/model.hpp"
#include "vsgp/sampler.hpp"
#include "vsgp/vb.hpp"

namespace vsgp {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class DataSource { Table, Events, ToyMulticlass, SyntheticPines };
enum class InducingStrategy { VbOptimized, KmeansFixed };
enum class InducingPlacement { Kmeans, Grid };

struct DatasetConfig {
  DataSource source = DataSource::Table;
  std::filesystem::path path;
  /// Response column for tables.
  std::string response = "y";
  /// Cox tasks bin events onto this grid.
  std::optional<GridSpec> grid;
  /// Rescale inputs (and the grid) onto the unit box before modelling.
  bool unit_inputs = false;
  std::uint64_t seed = 0;
};

struct LikelihoodConfig {
  /// gaussian | poisson | probit | robustmax
  std::string family = "gaussian";
  double noise_variance = 1.0;
  double epsilon = 1e-3;
  int num_classes = 2;
};

struct InducingConfig {
  /// One pipeline unit per entry.
  std::vector<int> counts{30};
  std::vector<InducingStrategy> strategies{InducingStrategy::VbOptimized};
  InducingPlacement placement = InducingPlacement::Kmeans;
};

struct SplitConfig {
  double test_fraction = 0.5;
  std::uint64_t seed = 0;
  int repetitions = 1;
};

struct SamplerConfig {
  int iterations = 10000;
  int burn_in = 1000;
  /// Fixed HMC settings skip tuning when both are given.
  std::optional<double> step_size;
  std::optional<int> max_leapfrog;
  /// Independent chains per unit; PSRF needs at least two.
  int chains = 1;
  bool gibbs = false;
  int psrf_points = 50;
  bool split_psrf = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  KernelKind kernel = KernelKind::Rbf;
  LikelihoodConfig likelihood;
  double initial_variance = 1.0;
  double nugget = 0.0;
  /// One entry broadcasts over dimensions.
  std::vector<double> initial_lengthscales{1.0};
  /// Empty means Gamma(1, 1) on every hyperparameter.
  std::vector<GammaPrior> priors;
  InducingConfig inducing;
  std::optional<SplitConfig> split;
  VbConfig vb;
  TuneConfig tune;
  SamplerConfig sampler;
  /// Extra prediction grid (class-probability or intensity maps).
  std::optional<GridSpec> eval_grid;
  std::filesystem::path output = "runs/experiment";

  void validate() const;
};

/// Parses a JSON configuration. Relative data paths resolve against
/// `base_dir`. Unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});

/// Canonical JSON of the effective configuration, defaults filled in.
std::string config_to_json(const ExperimentConfig& config);

}  // namespace vsgp
