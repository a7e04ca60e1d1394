#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace vsgp {

class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

class DimensionMismatch : public std::invalid_argument {
 public:
  explicit DimensionMismatch(const std::string& what) : std::invalid_argument(what) {}
};

/// Lower-triangular factor R with R R^T = K + jitter I.
struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;

  Eigen::Index dim() const { return lower.rows(); }
};

/// Factorizes a symmetric matrix, escalating diagonal jitter when the plain
/// factorization fails. The ladder is 0, then 1e-8 * mean(diag K) growing by
/// x10 per retry up to 1e-2 * mean(diag K).
///
/// Throws std::invalid_argument when K is not square or not symmetric to
/// 1e-12 relative, and NotPositiveDefinite when the last rung fails.
CholeskyFactor cholesky(const Eigen::MatrixXd& K);

/// Solves R X = B, or R^T X = B when `transposed` is set.
Eigen::MatrixXd tri_solve(const Eigen::MatrixXd& R, const Eigen::MatrixXd& B,
                          bool transposed = false);

/// Pushes the adjoint of a scalar F with respect to the Cholesky factor R
/// back to the factored matrix K.
///
/// Only the lower triangle of `R_bar` is read. The result is the symmetric
/// sensitivity S with dF = sum_ij S_ij dK_ij, where each off-diagonal pair
/// shares its total derivative evenly between (i,j) and (j,i).
Eigen::MatrixXd cholesky_reverse(const Eigen::MatrixXd& R, const Eigen::MatrixXd& R_bar);

namespace detail {

// Both return the lower-triangular form: diagonal holds dF/dK_ii and each
// strictly lower entry holds the derivative with respect to the tied pair
// (K_ij, K_ji).
Eigen::MatrixXd cholesky_reverse_unblocked(const Eigen::MatrixXd& R,
                                           const Eigen::MatrixXd& R_bar);
Eigen::MatrixXd cholesky_reverse_blocked(const Eigen::MatrixXd& R, const Eigen::MatrixXd& R_bar,
                                         Eigen::Index block_size);

}  // namespace detail

}  // namespace vsgp
