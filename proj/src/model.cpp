#include "vsgp/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vsgp/linalg.hpp"

namespace vsgp {

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    out.y(static_cast<Eigen::Index>(i)) = y(rows[i]);
  }
  return out;
}

double GammaPrior::log_density(double log_value) const {
  return shape * std::log(rate) - std::lgamma(shape) + shape * log_value -
         rate * std::exp(log_value);
}

double GammaPrior::dlog_density(double log_value) const {
  return shape - rate * std::exp(log_value);
}

Eigen::Index ModelSpec::num_kernel_params() const {
  return kernel_kind == KernelKind::Rbf ? 2 : 1 + data.input_dim();
}

bool ModelSpec::samples_noise() const { return std::holds_alternative<Gaussian>(likelihood); }

Eigen::Index ModelSpec::num_theta() const { return num_kernel_params() + (samples_noise() ? 1 : 0); }

KernelParams ModelSpec::kernel_at(const Eigen::VectorXd& theta) const {
  KernelParams k = KernelParams::from_unconstrained(kernel_kind, theta.head(num_kernel_params()));
  k.nugget = nugget;
  return k;
}

LikelihoodSpec ModelSpec::likelihood_at(const Eigen::VectorXd& theta) const {
  if (samples_noise()) {
    return Gaussian{std::exp(theta(num_kernel_params()))};
  }
  return likelihood;
}

Eigen::VectorXd ModelSpec::make_theta(const KernelParams& kernel) const {
  Eigen::VectorXd theta(num_theta());
  theta.head(num_kernel_params()) = kernel.to_unconstrained();
  if (samples_noise()) {
    theta(num_kernel_params()) = std::log(std::get<Gaussian>(likelihood).noise_variance);
  }
  return theta;
}

std::vector<std::string> ModelSpec::theta_names() const {
  std::vector<std::string> names{"log_variance"};
  if (kernel_kind == KernelKind::Rbf) {
    names.emplace_back("log_lengthscale");
  } else {
    for (Eigen::Index d = 0; d < data.input_dim(); ++d) {
      names.push_back("log_lengthscale_" + std::to_string(d));
    }
  }
  if (samples_noise()) names.emplace_back("log_noise_variance");
  return names;
}

const GammaPrior& ModelSpec::prior(Eigen::Index i) const {
  static const GammaPrior fallback{};
  if (priors.empty()) return fallback;
  return priors.at(static_cast<std::size_t>(i));
}

double ModelSpec::log_prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  double total = 0.0;
  if (grad) grad->setZero(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    total += prior(i).log_density(theta(i));
    if (grad) (*grad)(i) = prior(i).dlog_density(theta(i));
  }
  return total;
}

void ModelSpec::validate() const {
  if (data.X.rows() != data.y.size()) {
    throw DimensionMismatch("dataset has " + std::to_string(data.X.rows()) + " inputs but " +
                            std::to_string(data.y.size()) + " responses");
  }
  if (Z.rows() < 1) throw std::invalid_argument("need at least one inducing point");
  if (Z.cols() != data.X.cols()) {
    throw DimensionMismatch("inducing inputs and data have different input dimension");
  }
  if (Z.hasNaN()) throw std::invalid_argument("inducing inputs contain NaN");
  if (!priors.empty() && static_cast<Eigen::Index>(priors.size()) != num_theta()) {
    throw DimensionMismatch("expected " + std::to_string(num_theta()) + " priors, got " +
                            std::to_string(priors.size()));
  }
  for (const auto& p : priors) {
    if (!(p.shape > 0.0) || !(p.rate > 0.0)) {
      throw std::invalid_argument("Gamma prior shape and rate must be positive");
    }
  }
  validate_responses(likelihood, data.y);
}

}  // namespace vsgp
