#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/model.hpp"

namespace vsgp {

/// q(v_p) = N(m_p, L_p L_p^T) independently per latent function, together
/// with the point estimates of theta and Z it was fitted with.
struct GaussianApprox {
  Eigen::MatrixXd m;               // M x P
  std::vector<Eigen::MatrixXd> L;  // P lower-triangular M x M, positive diagonal
  Eigen::VectorXd theta;
  Eigen::MatrixXd Z;

  Eigen::Index num_inducing() const { return m.rows(); }
  int num_latent() const { return static_cast<int>(m.cols()); }
  void validate(const ModelSpec& model) const;
};

/// Zero-mean, unit-covariance approximation at the given theta and Z.
GaussianApprox prior_approx(const ModelSpec& model, const Eigen::VectorXd& theta);

struct ElboValue {
  double value = 0.0;
  double expected_log_lik = 0.0;
  double kl = 0.0;
  double log_prior = 0.0;
  Eigen::MatrixXd dm;
  std::vector<Eigen::MatrixXd> dL;  // lower triangle meaningful
  Eigen::VectorXd dtheta;
  Eigen::MatrixXd dZ;
};

/// sum_n E_q[log p(y_n | f_n)] - sum_p KL[q(v_p) || N(0, I)] + log p(theta),
/// evaluated at approx.Z (model.Z is ignored).
ElboValue elbo(const GaussianApprox& approx, const ModelSpec& model);

enum class OptimizerKind { Lbfgs, Adam };

struct VbConfig {
  int phase_a_iterations = 200;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-5;
  bool optimize_z = true;
  bool optimize_theta = true;
  OptimizerKind optimizer = OptimizerKind::Lbfgs;
  double adam_learning_rate = 0.01;
  std::uint64_t seed = 0;
};

struct VbFit {
  GaussianApprox approx;
  double elbo = 0.0;
  double phase_a_elbo = 0.0;
  /// Accepted-iterate ELBO values across both phases.
  std::vector<double> trace;
  int iterations = 0;
};

class NonFiniteElbo : public std::runtime_error {
 public:
  NonFiniteElbo(const std::string& what, GaussianApprox at)
      : std::runtime_error(what), iterate(std::move(at)) {}
  GaussianApprox iterate;
};

/// Two-phase maximization of the ELBO: Z held at model.Z for
/// phase_a_iterations, then (m, L, theta, Z) jointly until the gradient
/// max-norm is below tolerance or max_iterations is hit. theta starts from
/// `theta0`; m from N(0, 0.01 I) draws; L = 0.1 I. Returns the best iterate.
VbFit fit(const ModelSpec& model, const Eigen::VectorXd& theta0, const VbConfig& config);

/// Closed-form optimal q for a Gaussian likelihood at fixed theta and Z.
GaussianApprox optimal_gaussian_approx(const ModelSpec& model, const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& Z);

/// Exact log marginal likelihood log N(y | 0, Kff + noise I) for a Gaussian
/// likelihood, by dense Cholesky.
double dense_log_marginal_likelihood(const ModelSpec& model, const Eigen::VectorXd& theta);

struct BoundReport {
  double elbo = 0.0;  // without the hyperparameter prior
  double log_marginal = 0.0;
  double gap = 0.0;   // log_marginal - elbo
};

/// Compares the data part of the ELBO to the dense log marginal likelihood at
/// approx.theta. Gaussian likelihood only.
BoundReport elbo_bound_check(const GaussianApprox& approx, const ModelSpec& model);

}  // namespace vsgp
