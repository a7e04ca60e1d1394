#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/model.hpp"
#include "vsgp/objective.hpp"

namespace vsgp {

struct HmcConfig {
  double step_size = 0.1;
  /// Leapfrog counts are drawn uniformly from {1, ..., max_leapfrog}.
  int max_leapfrog = 10;
  int iterations = 10000;
  int burn_in = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Retained draws, one row per sample, in flat coordinates.
struct Chain {
  Eigen::MatrixXd states;
  Eigen::VectorXd log_density;
  std::vector<long> iteration;
  std::vector<std::uint8_t> accepted;
  /// Hyperparameter MH acceptances; Gibbs chains only.
  std::vector<std::uint8_t> accepted_theta;
  double wall_clock_seconds = 0.0;
  HmcConfig config;

  Eigen::Index size() const { return states.rows(); }
  double acceptance_rate() const;
  double theta_acceptance_rate() const;
};

class SamplerError : public std::runtime_error {
 public:
  explicit SamplerError(const std::string& what) : std::runtime_error(what) {}
};

/// Phase-space state carried through a trajectory.
struct PhasePoint {
  Eigen::VectorXd x;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

/// `steps` leapfrog steps of size `step_size` with identity mass. Returns
/// false as soon as the target stops being finite.
bool leapfrog(const LogDensity& target, PhasePoint& point, double step_size, int steps);

/// Single HMC transition from `current`; updates it in place and returns
/// whether the proposal was accepted.
bool hmc_step(const LogDensity& target, PhasePoint& current, double step_size, int max_leapfrog,
              std::mt19937_64& rng);

/// Leapfrog HMC with fresh standard-normal momenta, a uniformly drawn
/// trajectory length, and Metropolis correction on the Hamiltonian.
/// Non-finite proposals are rejected. Throws SamplerError if the target is
/// not finite at `init`.
Chain hmc_run(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config);

struct TuneConfig {
  int candidates = 30;
  int samples_per_candidate = 30;
  std::vector<int> max_leapfrog_grid{1, 2, 5, 10, 20, 50};
  double min_step = 1e-3;
  double max_step = 1.0;
  /// Divide the jump distance by sqrt(max_leapfrog).
  bool penalize_length = true;
  std::uint64_t seed = 0;
};

struct TuneCandidate {
  double step_size = 0.0;
  int max_leapfrog = 1;
  double esjd = 0.0;
  double score = 0.0;
  double acceptance = 0.0;
};

struct TuneReport {
  HmcConfig best;
  std::vector<TuneCandidate> candidates;
  /// State at the end of the last pilot run.
  Eigen::VectorXd final_state;
};

/// Mean squared Euclidean jump between successive rows, with the first
/// jump measured from `start`.
double expected_squared_jump(const Eigen::VectorXd& start, const Eigen::MatrixXd& states);

/// Pilot-run search over (step size, max leapfrog) maximizing the expected
/// squared jump distance, optionally divided by sqrt(max_leapfrog). The first
/// half of the budget samples log step sizes uniformly over
/// [min_step, max_step] and leapfrog caps from the grid; the second half
/// perturbs the incumbent. Each pilot continues from the previous pilot's
/// final state. The returned config carries `base`'s iterations, burn-in and
/// seed.
TuneReport tune(const LogDensity& target, const Eigen::VectorXd& init, const TuneConfig& config,
                const HmcConfig& base = {});

struct GibbsConfig {
  HmcConfig v_sampler;
  /// Isotropic random-walk scale for theta proposals.
  double theta_step = 0.1;
  int iterations = 10000;
  int burn_in = 1000;
  std::uint64_t seed = 0;
};

/// Alternates an HMC update of v at fixed theta with an isotropic Gaussian
/// random-walk Metropolis update of theta at fixed v.
Chain gibbs_run(const ModelSpec& model, const WhitenedState& init, const GibbsConfig& config);

struct GibbsTuneReport {
  GibbsConfig best;
  TuneReport v_report;
  std::vector<TuneCandidate> theta_candidates;
};

/// Tunes the v-update by `tune` on the conditional target at init.theta
/// without the length penalty, then the theta random-walk scale by pilot runs
/// maximizing the theta jump distance.
GibbsTuneReport tune_gibbs(const ModelSpec& model, const WhitenedState& init, TuneConfig config,
                           const GibbsConfig& base = {});

namespace detail {

/// Random-walk Metropolis update of theta at fixed v. `log_density` holds
/// log_qhat at the current state and is updated on acceptance.
bool theta_mh_step(const ModelSpec& model, WhitenedState& state, double& log_density, double step,
                   std::mt19937_64& rng);

/// Conditional target over vec(v) with theta held at `theta`.
LogDensity conditional_v_target(const ModelSpec& model, const Eigen::VectorXd& theta);

}  // namespace detail

}  // namespace vsgp
