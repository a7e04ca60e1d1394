#pragma once

#include <variant>

#include <Eigen/Core>

namespace vsgp {

struct Gaussian {
  double noise_variance = 1.0;
};

/// Log-link Poisson counts with a per-datum exposure (bin measure). A single
/// entry broadcasts over all data.
struct Poisson {
  Eigen::VectorXd bin_measure = Eigen::VectorXd::Ones(1);
};

/// Labels in {0, 1}, mapped to signs {-1, +1}.
struct BernoulliProbit {};

/// Probability 1 - epsilon on the argmax latent function, epsilon / (K - 1)
/// on every other class.
struct RobustMax {
  double epsilon = 1e-3;
  int num_classes = 2;
};

using LikelihoodSpec = std::variant<Gaussian, Poisson, BernoulliProbit, RobustMax>;

/// Number of latent functions the likelihood consumes per datum.
int latent_count(const LikelihoodSpec& spec);
void validate_responses(const LikelihoodSpec& spec, const Eigen::VectorXd& y);

/// Gauss-Hermite rule for the weight exp(-t^2); weights sum to sqrt(pi).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  int order = 0;
};

constexpr int kDefaultQuadratureOrder = 20;
constexpr int kMaxQuadratureOrder = 64;

QuadratureRule gauss_hermite(int order);
const QuadratureRule& default_quadrature();

struct Expectations {
  Eigen::VectorXd value;
  Eigen::VectorXd dmu;
  Eigen::VectorXd dgamma;
  /// d value / d log(noise variance); Gaussian only, empty otherwise.
  Eigen::VectorXd dlog_noise;
};

/// Per-datum E[log p(y_n | f_n)] under f_n ~ N(mu_n, gamma_n) with partials.
/// Gaussian and Poisson are closed-form unless `force_quadrature` is set;
/// probit always integrates log Phi(+-f) with `rule`.
Expectations variational_expectations(const LikelihoodSpec& spec, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& mu, const Eigen::VectorXd& gamma,
                                      const QuadratureRule& rule = default_quadrature(),
                                      bool force_quadrature = false);

struct MultiExpectations {
  Eigen::VectorXd value;  // N
  Eigen::MatrixXd dmu;    // N x K
  Eigen::MatrixXd dgamma; // N x K
};

/// P(f_y is the largest of K independent Gaussians) per datum, with partials
/// in every mean and variance. Stored in MultiExpectations::value.
MultiExpectations argmax_probability(const Eigen::VectorXd& labels, const Eigen::MatrixXd& mu,
                                     const Eigen::MatrixXd& gamma,
                                     const QuadratureRule& rule = default_quadrature());

/// p log(1 - eps) + (1 - p) log(eps / (K - 1)) with p from argmax_probability.
MultiExpectations robustmax_expectations(const RobustMax& spec, const Eigen::VectorXd& labels,
                                         const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma,
                                         const QuadratureRule& rule = default_quadrature());

/// N x K class probabilities: argmax probabilities renormalized to sum to one,
/// then passed through the robust-max likelihood.
Eigen::MatrixXd robustmax_class_probabilities(const RobustMax& spec, const Eigen::MatrixXd& mu,
                                              const Eigen::MatrixXd& gamma,
                                              const QuadratureRule& rule = default_quadrature());

/// log integral p(y* | f) N(f | mu*, gamma*) df per test point. `mu` and
/// `gamma` are N x latent_count(spec).
Eigen::VectorXd predictive_density(const LikelihoodSpec& spec, const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma,
                                   const QuadratureRule& rule = default_quadrature());

/// log Phi(x), accurate far into the lower tail.
double log_normal_cdf(double x);
/// phi(x) / Phi(x).
double inverse_mills_ratio(double x);

}  // namespace vsgp
