#include "vsgp/predict.hpp"

#include <cmath>
#include <limits>

#include "vsgp/objective.hpp"

namespace vsgp {

namespace {

LikelihoodSpec test_likelihood(const ModelSpec& model, const Eigen::VectorXd& theta,
                               const TestSet& test) {
  LikelihoodSpec spec = model.likelihood_at(theta);
  if (auto* p = std::get_if<Poisson>(&spec)) {
    if (test.exposure.size() > 0) {
      p->bin_measure = test.exposure;
    } else if (p->bin_measure.size() != 1 && p->bin_measure.size() != test.X.rows()) {
      throw DimensionMismatch("test points need an exposure for a per-bin Poisson likelihood");
    }
  }
  return spec;
}

Eigen::VectorXd exposure_of(const Poisson& p, Eigen::Index n) {
  return p.bin_measure.size() == 1 ? Eigen::VectorXd::Constant(n, p.bin_measure(0))
                                   : p.bin_measure;
}

// Response summary of a single Gaussian predictive.
Eigen::MatrixXd response_of(const LikelihoodSpec& spec, const Eigen::MatrixXd& mu,
                            const Eigen::MatrixXd& gamma) {
  const Eigen::Index n = mu.rows();
  if (std::holds_alternative<BernoulliProbit>(spec)) {
    Eigen::MatrixXd out(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, 0) = std::exp(log_normal_cdf(mu(i, 0) / std::sqrt(1.0 + gamma(i, 0))));
    }
    return out;
  }
  if (const auto* rm = std::get_if<RobustMax>(&spec)) {
    return robustmax_class_probabilities(*rm, mu, gamma);
  }
  if (const auto* p = std::get_if<Poisson>(&spec)) {
    const Eigen::VectorXd e = exposure_of(*p, n);
    return (e.array() * (mu.col(0) + 0.5 * gamma.col(0)).array().exp()).matrix();
  }
  return {};
}

}  // namespace

double log_mean_exp(const Eigen::VectorXd& x) {
  if (x.size() == 0) return -std::numeric_limits<double>::infinity();
  const double top = x.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((x.array() - top).exp().sum() / static_cast<double>(x.size()));
}

Prediction predict_vb(const GaussianApprox& approx, const ModelSpec& model, const TestSet& test) {
  approx.validate(model);
  const Projection proj = project(model.kernel_at(approx.theta), approx.Z, test.X);
  Prediction out;
  out.mean = proj.A.transpose() * approx.m;
  out.variance.resize(test.X.rows(), approx.num_latent());
  for (int p = 0; p < approx.num_latent(); ++p) {
    const Eigen::MatrixXd S =
        proj.A.transpose() * approx.L[static_cast<std::size_t>(p)].triangularView<Eigen::Lower>();
    out.variance.col(p) = (proj.residual + S.rowwise().squaredNorm()).cwiseMax(kMinVariance);
  }
  const LikelihoodSpec spec = test_likelihood(model, approx.theta, test);
  if (test.y.size() > 0) out.log_density = predictive_density(spec, test.y, out.mean, out.variance);
  out.response = response_of(spec, out.mean, out.variance);
  out.samples_used = 1;
  return out;
}

Prediction predict_chain(const Chain& chain, const ModelSpec& model, const TestSet& test,
                         bool keep_samples) {
  if (chain.size() == 0) throw PredictionError("cannot predict from an empty chain");
  const Eigen::Index n = test.X.rows();
  const int P = model.num_latent();
  const bool with_y = test.y.size() > 0;
  const bool count_task = std::holds_alternative<Poisson>(model.likelihood);

  Eigen::MatrixXd sum_mu = Eigen::MatrixXd::Zero(n, P);
  Eigen::MatrixXd sum_second = Eigen::MatrixXd::Zero(n, P);
  Eigen::MatrixXd sum_response;
  Eigen::MatrixXd densities;
  if (with_y) densities.resize(n, chain.size());
  Prediction out;
  if (keep_samples && count_task) out.sample_response.resize(chain.size(), n);

  for (Eigen::Index s = 0; s < chain.size(); ++s) {
    const WhitenedState state = unpack(chain.states.row(s).transpose(), model.num_inducing(), P);
    Moments mom;
    try {
      mom = conditional_moments(model, state, test.X);
    } catch (const NotPositiveDefinite&) {
      ++out.samples_skipped;
      continue;
    }
    mom.gamma = mom.gamma.cwiseMax(kMinVariance);
    const LikelihoodSpec spec = test_likelihood(model, state.theta, test);
    sum_mu += mom.mu;
    sum_second += mom.gamma + mom.mu.cwiseAbs2();
    const Eigen::MatrixXd r = response_of(spec, mom.mu, mom.gamma);
    if (sum_response.size() == 0) sum_response = Eigen::MatrixXd::Zero(r.rows(), r.cols());
    sum_response += r;
    if (with_y) densities.col(out.samples_used) = predictive_density(spec, test.y, mom.mu, mom.gamma);
    if (out.sample_response.size() > 0) out.sample_response.row(out.samples_used) = r.col(0).transpose();
    ++out.samples_used;
  }
  const double skipped = static_cast<double>(out.samples_skipped) / static_cast<double>(chain.size());
  if (out.samples_used == 0 || skipped > kMaxSkippedFraction) {
    throw PredictionError(std::to_string(out.samples_skipped) + " of " +
                          std::to_string(chain.size()) +
                          " samples could not be factorized");
  }
  const double used = out.samples_used;
  out.mean = sum_mu / used;
  out.variance = (sum_second / used - out.mean.cwiseAbs2()).cwiseMax(0.0);
  out.response = sum_response / used;
  if (out.sample_response.size() > 0) out.sample_response.conservativeResize(out.samples_used, n);
  if (with_y) {
    out.log_density.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.log_density(i) = log_mean_exp(densities.row(i).head(out.samples_used).transpose());
    }
  }
  return out;
}

Task task_of(const LikelihoodSpec& spec) {
  if (std::holds_alternative<Gaussian>(spec)) return Task::Regression;
  if (std::holds_alternative<BernoulliProbit>(spec)) return Task::Binary;
  if (std::holds_alternative<RobustMax>(spec)) return Task::Multiclass;
  return Task::Count;
}

Metrics score(const Prediction& prediction, const Eigen::VectorXd& y, Task task) {
  if (prediction.log_density.size() != y.size()) {
    throw DimensionMismatch("score: prediction has no densities for these responses");
  }
  Metrics m;
  m.count = y.size();
  m.mean_log_density = y.size() == 0 ? 0.0 : prediction.log_density.mean();
  m.accuracy = std::numeric_limits<double>::quiet_NaN();
  if (task == Task::Binary || task == Task::Multiclass) {
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      Eigen::Index label = 0;
      if (task == Task::Binary) {
        label = prediction.response(i, 0) > 0.5 ? 1 : 0;
      } else {
        prediction.response.row(i).maxCoeff(&label);
      }
      if (label == static_cast<Eigen::Index>(y(i))) ++correct;
    }
    m.accuracy = y.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(y.size());
  }
  return m;
}

}  // namespace vsgp
