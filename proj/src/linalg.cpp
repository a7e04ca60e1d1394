#include "vsgp/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

namespace vsgp {

namespace {

constexpr Eigen::Index kReverseBlockSize = 32;

void check_symmetric(const Eigen::MatrixXd& K) {
  if (K.rows() != K.cols()) {
    throw DimensionMismatch("cholesky: matrix is not square");
  }
  const double scale = std::max(K.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index j = 0; j < K.cols(); ++j) {
    for (Eigen::Index i = j + 1; i < K.rows(); ++i) {
      if (std::abs(K(i, j) - K(j, i)) > 1e-12 * scale) {
        throw std::invalid_argument("cholesky: matrix is not symmetric");
      }
    }
  }
}

}  // namespace

CholeskyFactor cholesky(const Eigen::MatrixXd& K) {
  check_symmetric(K);
  const Eigen::Index n = K.rows();
  if (n == 0) {
    return {};
  }
  if (!K.allFinite()) {
    throw NotPositiveDefinite("cholesky: matrix has non-finite entries");
  }
  const double mean_diag = K.diagonal().mean();

  // Rung 0 is unjittered, rungs 1..7 add mean_diag * 1e-8 .. 1e-2.
  for (int k = 0; k <= 7; ++k) {
    const double jitter = k == 0 ? 0.0 : mean_diag * std::pow(10.0, k - 9);
    if (k > 0 && !(jitter > 0.0)) break;
    Eigen::MatrixXd shifted = K;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) {
      CholeskyFactor out;
      out.lower = llt.matrixL();
      out.jitter = jitter;
      return out;
    }
  }
  throw NotPositiveDefinite("cholesky: factorization failed at maximum jitter");
}

Eigen::MatrixXd tri_solve(const Eigen::MatrixXd& R, const Eigen::MatrixXd& B, bool transposed) {
  if (R.rows() != R.cols() || R.rows() != B.rows()) {
    throw DimensionMismatch("tri_solve: factor is " + std::to_string(R.rows()) + "x" +
                            std::to_string(R.cols()) + ", right-hand side has " +
                            std::to_string(B.rows()) + " rows");
  }
  if (transposed) {
    return R.triangularView<Eigen::Lower>().transpose().solve(B);
  }
  return R.triangularView<Eigen::Lower>().solve(B);
}

namespace detail {

Eigen::MatrixXd cholesky_reverse_unblocked(const Eigen::MatrixXd& L, const Eigen::MatrixXd& L_bar) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd A = L_bar.triangularView<Eigen::Lower>();
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const Eigen::Index below = n - k - 1;
    A(k, k) -= L.col(k).tail(below).dot(A.col(k).tail(below)) / L(k, k);
    A.col(k).tail(n - k) /= L(k, k);
    A.row(k).head(k) -= A.col(k).tail(n - k).transpose() * L.block(k, 0, n - k, k);
    A.block(k + 1, 0, below, k) -= A.col(k).tail(below) * L.row(k).head(k);
    A(k, k) *= 0.5;
  }
  return A;
}

// Level-3 sweep over diagonal blocks from the bottom right. With the block
// partition L = [[L11, 0, 0], [R, D, 0], [B, C, E]], the diagonal block is
// D = chol(K_JJ - R R^T) and C = (K_KJ - B R^T) D^{-T}.
Eigen::MatrixXd cholesky_reverse_blocked(const Eigen::MatrixXd& L, const Eigen::MatrixXd& L_bar,
                                         Eigen::Index block_size) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd A = L_bar.triangularView<Eigen::Lower>();
  for (Eigen::Index end = n; end > 0; end -= block_size) {
    const Eigen::Index j0 = std::max<Eigen::Index>(0, end - block_size);
    const Eigen::Index nb = end - j0;
    const Eigen::Index nk = n - end;

    const auto R = L.block(j0, 0, nb, j0);
    const Eigen::MatrixXd D = L.block(j0, j0, nb, nb);
    const auto B = L.block(end, 0, nk, j0);
    const auto C = L.block(end, j0, nk, nb);

    // C_bar <- C_bar D^{-1}
    Eigen::MatrixXd C_bar = A.block(end, j0, nk, nb);
    if (nk > 0) {
      C_bar = D.triangularView<Eigen::Lower>()
                  .transpose()
                  .solve(C_bar.transpose())
                  .transpose();
      A.block(end, 0, nk, j0).noalias() -= C_bar * R;
    }
    Eigen::MatrixXd D_bar = A.block(j0, j0, nb, nb);
    if (nk > 0) {
      D_bar.triangularView<Eigen::Lower>() -= (C_bar.transpose() * C).eval();
    }
    D_bar = cholesky_reverse_unblocked(D, D_bar);

    Eigen::MatrixXd R_bar = A.block(j0, 0, nb, j0);
    if (nk > 0) {
      R_bar.noalias() -= C_bar.transpose() * B;
    }
    R_bar.noalias() -= (D_bar + D_bar.transpose()) * R;

    A.block(end, j0, nk, nb) = C_bar;
    A.block(j0, j0, nb, nb) = D_bar;
    A.block(j0, 0, nb, j0) = R_bar;
  }
  return A;
}

}  // namespace detail

Eigen::MatrixXd cholesky_reverse(const Eigen::MatrixXd& R, const Eigen::MatrixXd& R_bar) {
  if (R.rows() != R.cols() || R_bar.rows() != R.rows() || R_bar.cols() != R.cols()) {
    throw DimensionMismatch("cholesky_reverse: factor and adjoint shapes differ");
  }
  const Eigen::MatrixXd lower = detail::cholesky_reverse_blocked(R, R_bar, kReverseBlockSize);
  const Eigen::Index n = R.rows();
  Eigen::MatrixXd sym(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    sym(j, j) = lower(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double half = 0.5 * lower(i, j);
      sym(i, j) = half;
      sym(j, i) = half;
    }
  }
  return sym;
}

}  // namespace vsgp
