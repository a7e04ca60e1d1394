#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/model.hpp"

namespace vsgp {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Headered delimited text (comma, tab or space), one observation per row.
/// Lines starting with '#' are skipped. `response` names the response
/// column; every other column is an input.
Dataset load_table(const std::filesystem::path& path, const std::string& response);

/// Raw event locations, one per row, D columns. Comment lines and a single
/// non-numeric header line are skipped.
Eigen::MatrixXd load_events(const std::filesystem::path& path);

struct GridSpec {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<int> bins;

  Eigen::Index dim() const { return lower.size(); }
  Eigen::Index cells() const;
  double cell_volume() const;
  /// Cell centers, first dimension varying slowest.
  Eigen::MatrixXd centers() const;
  void validate() const;
};

struct BinnedEvents {
  /// X = cell centers, y = counts.
  Dataset data;
  double bin_measure = 0.0;
  Eigen::Index outside = 0;
};

/// Counts events per grid cell. Events outside the bounds are dropped and
/// counted; the upper bound belongs to the last cell.
BinnedEvents bin_events(const Eigen::MatrixXd& events, const GridSpec& grid);

/// 750 points in 2D from three Gaussian components (250 each) with labels
/// 0, 1, 2:
///   class 0: mean (-1.0,  0.0), cov [[0.60,  0.35], [ 0.35, 0.45]]
///   class 1: mean ( 1.0,  0.0), cov [[0.60, -0.35], [-0.35, 0.45]]
///   class 2: mean ( 0.0,  1.1), cov [[1.20,  0.00], [ 0.00, 0.12]]
/// Rows are ordered by class.
Dataset make_toy_multiclass(std::uint64_t seed);

/// Synthetic stand-in for a planar pattern of saplings: a log-Gaussian Cox
/// process on the unit square. The log intensity is an RBF GP (variance 1,
/// lengthscale 0.15) plus log(120), sampled on a 64 x 64 lattice; each
/// lattice cell receives Poisson(intensity x cell area) uniform points.
Eigen::MatrixXd make_synthetic_pines(std::uint64_t seed);

struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Random partition with round(test_fraction * n) test points, both index
/// lists sorted.
Split random_split(Eigen::Index n, double test_fraction, std::uint64_t seed);

/// Affine map of each input column onto [0, 1] using the given bounds.
Eigen::MatrixXd to_unit_box(const Eigen::MatrixXd& X, const Eigen::VectorXd& lower,
                            const Eigen::VectorXd& upper);

}  // namespace vsgp
