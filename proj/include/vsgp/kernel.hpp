#pragma once

#include <Eigen/Core>

namespace vsgp {

enum class KernelKind { Rbf, Ard };

/// Squared-exponential covariance
///   k(a, b) = variance * exp(-0.5 * sum_d (a_d - b_d)^2 / lengthscale_d^2).
/// Isotropic kernels carry a single lengthscale shared by all dimensions.
struct KernelParams {
  KernelKind kind = KernelKind::Rbf;
  double variance = 1.0;
  Eigen::VectorXd lengthscales = Eigen::VectorXd::Ones(1);
  /// White-noise variance on the diagonal at data and test inputs, as a
  /// fraction of `variance`. Kuu and Kuf do not see it.
  double nugget = 0.0;

  static KernelParams rbf(double variance, double lengthscale);
  static KernelParams ard(double variance, Eigen::VectorXd lengthscales);

  /// Number of unconstrained coordinates: 1 + number of lengthscales.
  Eigen::Index num_params() const { return 1 + lengthscales.size(); }

  /// Elementwise log: (log variance, log lengthscales...).
  Eigen::VectorXd to_unconstrained() const;
  static KernelParams from_unconstrained(KernelKind kind, const Eigen::VectorXd& log_params);

  /// Lengthscale for dimension d, broadcasting the isotropic case.
  double lengthscale(Eigen::Index d) const {
    return kind == KernelKind::Rbf ? lengthscales(0) : lengthscales(d);
  }
  void validate(Eigen::Index input_dim) const;
};

/// Points are stored one per row.
Eigen::MatrixXd kuu(const KernelParams& params, const Eigen::MatrixXd& Z);
Eigen::MatrixXd kuf(const KernelParams& params, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& X);
/// variance * (1 + nugget) per point.
Eigen::VectorXd kdiag(const KernelParams& params, const Eigen::MatrixXd& X);

struct KernelGradients {
  Eigen::VectorXd log_params;  // same layout as KernelParams::to_unconstrained
  Eigen::MatrixXd Z;           // M x D
};

/// Gradient of sum(Kuu_bar .* Kuu) + sum(Kuf_bar .* Kuf) + sum(kdiag_bar .* kdiag)
/// with respect to the log-parameters and the inducing inputs. `Kuu_bar` is
/// read as a full (not triangular) sensitivity.
KernelGradients kernel_adjoints(const KernelParams& params, const Eigen::MatrixXd& Z,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& Kuu_bar,
                                const Eigen::MatrixXd& Kuf_bar, const Eigen::VectorXd& kdiag_bar);

}  // namespace vsgp
