#pragma once

#include <functional>

#include <Eigen/Core>

#include "vsgp/linalg.hpp"
#include "vsgp/model.hpp"

namespace vsgp {

/// Whitened inducing values v (M x P) and unconstrained hyperparameters.
/// u = R v with R R^T = Kuu(theta, Z).
struct WhitenedState {
  Eigen::MatrixXd v;
  Eigen::VectorXd theta;
};

/// Marginal moments of f at query points, one column per latent function.
struct Moments {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd gamma;
};

/// Floor applied to conditional variances before they reach a likelihood.
constexpr double kMinVariance = 1e-12;

/// Kernel blocks and the whitened projection A = R^{-1} Kuf shared by the
/// sampling target, the ELBO and prediction.
struct Projection {
  KernelParams kernel;
  CholeskyFactor chol;
  Eigen::MatrixXd Kuf;
  Eigen::MatrixXd A;
  /// diag(Kqq - A^T A), before flooring.
  Eigen::VectorXd residual;
};

Projection project(const KernelParams& kernel, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Xq);

struct ProjectionGradients {
  Eigen::VectorXd log_kernel;
  Eigen::MatrixXd Z;
};

/// Chain rule from adjoints on A and on the residual variance back to the
/// kernel log-parameters and Z.
ProjectionGradients backprop_projection(const Projection& proj, const Eigen::MatrixXd& Z,
                                        const Eigen::MatrixXd& Xq, const Eigen::MatrixXd& A_bar,
                                        const Eigen::VectorXd& residual_bar);

/// Expected log-likelihood summed over data, with partials in the moments
/// (N x P each) and in theta (only the likelihood part of theta is touched).
struct ExpectedLogLik {
  double value = 0.0;
  Eigen::MatrixXd dmu;
  Eigen::MatrixXd dgamma;
  Eigen::VectorXd dtheta;
};

ExpectedLogLik expected_log_likelihood(const ModelSpec& model, const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma);

/// mu = A^T v and gamma = diag(Kqq - A^T A), the latter shared by all latent functions.
Moments conditional_moments(const ModelSpec& model, const WhitenedState& state,
                            const Eigen::MatrixXd& Xq);

struct TargetValue {
  double value = 0.0;
  Eigen::MatrixXd dv;
  Eigen::VectorXd dtheta;
  /// Filled only when requested.
  Eigen::MatrixXd dZ;
};

/// log q(v, theta) up to its normalizing constant: expected log-likelihood
/// plus standard-normal log-density of v plus the hyperparameter log-prior.
TargetValue log_qhat(const WhitenedState& state, const ModelSpec& model, bool with_z_gradient = false);

/// u = R v.
Eigen::MatrixXd unwhiten(const ModelSpec& model, const WhitenedState& state);

/// Flat coordinates [vec(v) column-major, theta] used by the samplers.
Eigen::VectorXd pack(const WhitenedState& state);
WhitenedState unpack(const Eigen::VectorXd& flat, Eigen::Index num_inducing, int num_latent);

/// Log-density with gradient over a flat coordinate vector. Returns a
/// non-finite value when the point cannot be evaluated.
using LogDensity = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// log_qhat as a LogDensity over pack()'d coordinates. Factorization
/// failures map to -infinity.
LogDensity make_target(const ModelSpec& model);

}  // namespace vsgp
