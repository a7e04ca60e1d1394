#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsgp/config.hpp"
#include "vsgp/predict.hpp"

namespace vsgp {

/// Pipeline stages; the value is the CLI exit code on failure.
enum class Stage { Config = 2, Data = 3, Vb = 4, Tune = 5, Sample = 6, Predict = 7, Diagnose = 8, Emit = 9 };

const char* stage_name(Stage stage);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(Stage stage, const std::string& what)
      : std::runtime_error(std::string(stage_name(stage)) + ": " + what), stage(stage) {}
  Stage stage;
};

/// The dataset in model coordinates. With unit_inputs the inputs, grid and
/// bin measure are expressed on the unit box; `offset` and `scale` map back
/// via x = offset + scale * x_model.
struct PreparedData {
  Dataset data;
  LikelihoodSpec likelihood;
  std::optional<GridSpec> grid;
  std::optional<GridSpec> eval_grid;
  Eigen::VectorXd offset;
  Eigen::VectorXd scale;
  Eigen::Index outside = 0;
  /// Event locations in model coordinates (Cox data only).
  Eigen::MatrixXd events;
  /// Grid cell volume in original units (Cox data only).
  double original_cell_volume = 0.0;

  Eigen::MatrixXd to_original(const Eigen::MatrixXd& X) const;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// One (split, inducing count, strategy) combination. For Cox data a split
/// partitions the events and both parts are binned on the full grid.
struct UnitSpec {
  int repetition = 0;
  int num_inducing = 0;
  InducingStrategy strategy = InducingStrategy::VbOptimized;
  std::filesystem::path dir;
};

std::vector<UnitSpec> plan_units(const ExperimentConfig& config, const std::filesystem::path& root);

/// Stages of one unit. Every stage reads its inputs from and writes its
/// outputs to the unit directory, so stages can run as separate processes:
///
///   fit_vb    -> checkpoint.txt, vb.json
///   tune      -> tuning.json
///   sample    -> chain_hmc_<c>.txt
///   gibbs     -> tuning_gibbs.json, chain_gibbs_<c>.txt
///   predict   -> predictions_<method>_<set>.txt, rate_bands_<method>.txt, metrics.json
///   diagnose  -> diagnostics.json, psrf_<sampler>.txt
class UnitRunner {
 public:
  UnitRunner(const ExperimentConfig& config, const PreparedData& prepared, UnitSpec unit);

  void fit_vb();
  void tune();
  void sample();
  void gibbs();
  void predict();
  void diagnose();
  void run_all();

  const Dataset& train() const { return train_; }
  const Dataset& test() const { return test_; }
  /// Model over the training data with Z and priors set from the checkpoint.
  ModelSpec model_from_checkpoint() const;

 private:
  ModelSpec base_model() const;
  std::uint64_t seed(std::uint64_t stream) const;

  const ExperimentConfig& config_;
  const PreparedData& prepared_;
  UnitSpec unit_;
  Dataset train_;
  Dataset test_;
  bool has_split_ = false;
};

/// Runs every unit of the experiment under `root` (defaults to
/// config.output), holding a lockfile for the duration. Writes config.json and
/// a summary metrics.json. Returns the artifact directory.
std::filesystem::path run_pipeline(const ExperimentConfig& config,
                                   std::optional<std::filesystem::path> root = std::nullopt);

/// Exclusive ownership of a run directory.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// Inducing locations: k-means on the inputs or a regular lattice over
/// `bounds` with round(M^(1/D)) points per dimension (M must be a perfect
/// power).
Eigen::MatrixXd initial_inducing(const Eigen::MatrixXd& X, int M, InducingPlacement placement,
                                 const std::optional<GridSpec>& bounds, std::uint64_t seed);

/// Draw v ~ q(v) and take theta at the approximation's point estimate.
WhitenedState init_from_approx(const GaussianApprox& approx, std::uint64_t seed);

/// Writes plot-ready tables under <root>/plots. Fails without writing
/// anything when a required chain or prediction is missing or empty.
void emit_plot_data(const std::filesystem::path& root);

}  // namespace vsgp
