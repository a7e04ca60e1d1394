#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/kernel.hpp"
#include "vsgp/likelihood.hpp"

namespace vsgp {

/// Inputs one per row; responses typed by the likelihood (values, counts,
/// {0,1} labels, or class indices stored as doubles).
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }
  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

/// Gamma(shape, rate) on a positive hyperparameter, evaluated on the log
/// scale with the change-of-variables Jacobian included.
struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;

  double log_density(double log_value) const;
  double dlog_density(double log_value) const;
};

/// Everything needed to evaluate the sampling target. The hyperparameter
/// vector theta is laid out as
///   [log variance, log lengthscale(s), log noise variance (Gaussian only)].
/// The likelihood's own noise_variance is only a starting value; evaluation
/// always reads it from theta. All latent functions share Z and the kernel.
struct ModelSpec {
  Dataset data;
  KernelKind kernel_kind = KernelKind::Rbf;
  LikelihoodSpec likelihood = Gaussian{};
  Eigen::MatrixXd Z;
  /// One prior per theta entry. Left empty, every entry gets Gamma(1, 1).
  std::vector<GammaPrior> priors;
  /// Passed to every KernelParams built from theta.
  double nugget = 0.0;

  Eigen::Index num_inducing() const { return Z.rows(); }
  int num_latent() const { return latent_count(likelihood); }
  Eigen::Index num_kernel_params() const;
  Eigen::Index num_theta() const;
  bool samples_noise() const;

  KernelParams kernel_at(const Eigen::VectorXd& theta) const;
  LikelihoodSpec likelihood_at(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd make_theta(const KernelParams& kernel) const;
  std::vector<std::string> theta_names() const;
  const GammaPrior& prior(Eigen::Index i) const;

  double log_prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr) const;

  /// Throws on inconsistent dimensions or responses.
  void validate() const;
};

}  // namespace vsgp
