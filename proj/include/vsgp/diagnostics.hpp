#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace vsgp {

/// Per-parameter effective sample sizes of an S x Q draw matrix.
struct EssResult {
  Eigen::VectorXd ess;
  /// True where the parameter never moved; its ESS is reported as S.
  std::vector<bool> constant;

  double min() const;
};

/// Geyer initial-positive-sequence estimator on FFT autocovariances,
/// clipped to (0, S]. Requires S >= 10.
EssResult ess(const Eigen::MatrixXd& draws);

struct TnEss {
  double min_per_second = 0.0;
  Eigen::VectorXd per_second;
};

TnEss tn_ess(const EssResult& e, double wall_clock_seconds);

struct PsrfResult {
  Eigen::VectorXd psrf;
  /// Parameters with zero within-chain variance; PSRF reported as 1 when the
  /// between-chain variance is also zero, +inf otherwise.
  std::vector<bool> degenerate;
};

/// Gelman-Rubin potential scale reduction over equal-length chains.
/// With `split`, each chain is halved first.
PsrfResult psrf(const std::vector<Eigen::MatrixXd>& chains, bool split = false);

/// PSRF on growing prefixes. Row i holds the prefix length followed by one
/// PSRF per parameter.
Eigen::MatrixXd psrf_evolution(const std::vector<Eigen::MatrixXd>& chains, int points,
                               bool split = false);

/// Indices of the `count` parameters with the smallest ESS, ascending.
std::vector<Eigen::Index> least_efficient(const EssResult& e, std::size_t count);

}  // namespace vsgp
