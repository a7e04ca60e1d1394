#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace vsgp {

/// M cluster centres of the rows of X: k-means++ seeding followed by Lloyd
/// iterations, stopping after 100 sweeps or when the relative change in
/// inertia drops below 1e-6. Throws std::invalid_argument when M > N or M < 1.
Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& X, Eigen::Index M, std::uint64_t seed);

}  // namespace vsgp
