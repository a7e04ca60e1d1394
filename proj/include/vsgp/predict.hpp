#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/model.hpp"
#include "vsgp/sampler.hpp"
#include "vsgp/vb.hpp"

namespace vsgp {

/// Marginal predictions at test inputs.
struct Prediction {
  /// Latent mean and variance per test point and latent function.
  Eigen::MatrixXd mean;
  Eigen::MatrixXd variance;
  /// log p(y* | data) per test point; empty when no responses were given.
  Eigen::VectorXd log_density;
  /// Probit: P(y = 1), one column. Robust-max: class probabilities.
  /// Poisson: expected count per bin. Gaussian: empty.
  Eigen::MatrixXd response;
  /// Poisson only, chains only: per-sample expected counts (S x N*).
  Eigen::MatrixXd sample_response;
  int samples_used = 0;
  int samples_skipped = 0;
};

class PredictionError : public std::runtime_error {
 public:
  explicit PredictionError(const std::string& what) : std::runtime_error(what) {}
};

/// Test-time inputs. `exposure` overrides the Poisson bin measure (one entry
/// broadcasts); empty keeps the model's.
struct TestSet {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd exposure;
};

/// Largest fraction of chain samples allowed to fail factorization.
constexpr double kMaxSkippedFraction = 0.01;

/// Monte-Carlo predictive from a chain of pack()'d (v, theta) states using
/// model.Z. Densities are log-mean-exp over samples; latent moments are the
/// mixture moments.
Prediction predict_chain(const Chain& chain, const ModelSpec& model, const TestSet& test,
                         bool keep_samples = false);

/// Gaussian predictive q(f*) = N(A^T m, gamma + rowsum((A^T L)^2)).
Prediction predict_vb(const GaussianApprox& approx, const ModelSpec& model, const TestSet& test);

enum class Task { Regression, Binary, Multiclass, Count };

Task task_of(const LikelihoodSpec& spec);

struct Metrics {
  double mean_log_density = 0.0;
  /// Classification only; NaN otherwise.
  double accuracy = 0.0;
  Eigen::Index count = 0;
};

Metrics score(const Prediction& prediction, const Eigen::VectorXd& y, Task task);

/// Numerically stable log((1/n) sum exp(x_i)).
double log_mean_exp(const Eigen::VectorXd& x);

}  // namespace vsgp
