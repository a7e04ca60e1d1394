#include "vsgp/kernel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vsgp/linalg.hpp"

namespace vsgp {

KernelParams KernelParams::rbf(double variance, double lengthscale) {
  KernelParams p;
  p.kind = KernelKind::Rbf;
  p.variance = variance;
  p.lengthscales = Eigen::VectorXd::Constant(1, lengthscale);
  return p;
}

KernelParams KernelParams::ard(double variance, Eigen::VectorXd lengthscales) {
  KernelParams p;
  p.kind = KernelKind::Ard;
  p.variance = variance;
  p.lengthscales = std::move(lengthscales);
  return p;
}

Eigen::VectorXd KernelParams::to_unconstrained() const {
  Eigen::VectorXd out(num_params());
  out(0) = std::log(variance);
  out.tail(lengthscales.size()) = lengthscales.array().log().matrix();
  return out;
}

KernelParams KernelParams::from_unconstrained(KernelKind kind, const Eigen::VectorXd& log_params) {
  KernelParams p;
  p.kind = kind;
  p.variance = std::exp(log_params(0));
  p.lengthscales = log_params.tail(log_params.size() - 1).array().exp().matrix();
  return p;
}

void KernelParams::validate(Eigen::Index input_dim) const {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw std::invalid_argument("kernel variance must be positive and finite");
  }
  if (lengthscales.size() == 0 || !(lengthscales.array() > 0.0).all() || !lengthscales.allFinite()) {
    throw std::invalid_argument("kernel lengthscales must be positive and finite");
  }
  if (kind == KernelKind::Rbf && lengthscales.size() != 1) {
    throw DimensionMismatch("isotropic kernel takes exactly one lengthscale");
  }
  if (kind == KernelKind::Ard && lengthscales.size() != input_dim) {
    throw DimensionMismatch("ARD kernel needs " + std::to_string(input_dim) +
                            " lengthscales, got " + std::to_string(lengthscales.size()));
  }
}

namespace {

Eigen::MatrixXd scaled(const KernelParams& p, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), X.cols());
  for (Eigen::Index d = 0; d < X.cols(); ++d) {
    out.col(d) = X.col(d) / p.lengthscale(d);
  }
  return out;
}

// exp(-r^2/2) with r^2 = |a|^2 + |b|^2 - 2 a.b, clamped at zero.
Eigen::MatrixXd cross(const KernelParams& p, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) {
    throw DimensionMismatch("kernel: point sets have different input dimension");
  }
  p.validate(A.cols());
  const Eigen::MatrixXd As = scaled(p, A);
  const Eigen::MatrixXd Bs = scaled(p, B);
  const Eigen::VectorXd an = As.rowwise().squaredNorm();
  const Eigen::VectorXd bn = Bs.rowwise().squaredNorm();
  Eigen::MatrixXd K = -2.0 * As * Bs.transpose();
  K.colwise() += an;
  K.rowwise() += bn.transpose();
  return (p.variance * (-0.5 * K.array().max(0.0)).exp()).matrix();
}

// Accumulates gradients of sum(W .* K(A, B)) into log-params and into the
// coordinates of A and/or B.
void accumulate(const KernelParams& p, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                const Eigen::MatrixXd& K, const Eigen::MatrixXd& W, Eigen::VectorXd& dlog,
                Eigen::MatrixXd* dA, Eigen::MatrixXd* dB) {
  const Eigen::Index dims = A.cols();
  const Eigen::MatrixXd G = W.cwiseProduct(K);
  dlog(0) += G.sum();
  for (Eigen::Index d = 0; d < dims; ++d) {
    const double inv_l2 = 1.0 / (p.lengthscale(d) * p.lengthscale(d));
    const Eigen::Index slot = p.kind == KernelKind::Rbf ? 1 : 1 + d;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double diff = A(i, d) - B(j, d);
        const double g = G(i, j);
        acc += g * diff * diff;
        if (dA) (*dA)(i, d) -= g * diff * inv_l2;
        if (dB) (*dB)(j, d) += g * diff * inv_l2;
      }
    }
    dlog(slot) += acc * inv_l2;
  }
}

}  // namespace

Eigen::MatrixXd kuu(const KernelParams& params, const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd K = cross(params, Z, Z);
  for (Eigen::Index j = 0; j < K.cols(); ++j) {
    K(j, j) = params.variance;
    for (Eigen::Index i = j + 1; i < K.rows(); ++i) {
      K(j, i) = K(i, j);
    }
  }
  return K;
}

Eigen::MatrixXd kuf(const KernelParams& params, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& X) {
  return cross(params, Z, X);
}

Eigen::VectorXd kdiag(const KernelParams& params, const Eigen::MatrixXd& X) {
  params.validate(X.cols());
  return Eigen::VectorXd::Constant(X.rows(), params.variance * (1.0 + params.nugget));
}

KernelGradients kernel_adjoints(const KernelParams& params, const Eigen::MatrixXd& Z,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& Kuu_bar,
                                const Eigen::MatrixXd& Kuf_bar, const Eigen::VectorXd& kdiag_bar) {
  const Eigen::Index M = Z.rows();
  const Eigen::Index N = X.rows();
  if (Kuu_bar.rows() != M || Kuu_bar.cols() != M) {
    throw DimensionMismatch("kernel_adjoints: Kuu adjoint must be M x M");
  }
  if (Kuf_bar.rows() != M || Kuf_bar.cols() != N) {
    throw DimensionMismatch("kernel_adjoints: Kuf adjoint must be M x N");
  }
  if (kdiag_bar.size() != N) {
    throw DimensionMismatch("kernel_adjoints: diagonal adjoint must have length N");
  }
  if (X.cols() != Z.cols()) {
    throw DimensionMismatch("kernel_adjoints: Z and X have different input dimension");
  }

  KernelGradients out;
  out.log_params = Eigen::VectorXd::Zero(params.num_params());
  out.Z = Eigen::MatrixXd::Zero(M, Z.cols());

  const Eigen::MatrixXd K_zz = kuu(params, Z);
  accumulate(params, Z, Z, K_zz, Kuu_bar, out.log_params, &out.Z, &out.Z);
  if (N > 0) {
    const Eigen::MatrixXd K_zx = kuf(params, Z, X);
    accumulate(params, Z, X, K_zx, Kuf_bar, out.log_params, &out.Z, nullptr);
  }
  out.log_params(0) += params.variance * (1.0 + params.nugget) * kdiag_bar.sum();
  return out;
}

}  // namespace vsgp
