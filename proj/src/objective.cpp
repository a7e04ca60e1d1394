#include "vsgp/objective.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace vsgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

Projection project(const KernelParams& kernel, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Xq) {
  Projection p;
  p.kernel = kernel;
  p.chol = cholesky(kuu(kernel, Z));
  p.Kuf = kuf(kernel, Z, Xq);
  p.A = tri_solve(p.chol.lower, p.Kuf);
  p.residual = kdiag(kernel, Xq) - p.A.colwise().squaredNorm().transpose();
  return p;
}

ProjectionGradients backprop_projection(const Projection& proj, const Eigen::MatrixXd& Z,
                                        const Eigen::MatrixXd& Xq, const Eigen::MatrixXd& A_bar,
                                        const Eigen::VectorXd& residual_bar) {
  const Eigen::MatrixXd& R = proj.chol.lower;
  Eigen::MatrixXd A_total = A_bar;
  A_total.noalias() -= 2.0 * proj.A * residual_bar.asDiagonal();
  // A = R^{-1} Kuf: Kuf_bar = R^{-T} A_bar, R_bar = -Kuf_bar A^T.
  const Eigen::MatrixXd Kuf_bar = tri_solve(R, A_total, /*transposed=*/true);
  Eigen::MatrixXd R_bar(R.rows(), R.cols());
  R_bar.noalias() = -Kuf_bar * proj.A.transpose();
  const Eigen::MatrixXd Kuu_bar = cholesky_reverse(R, R_bar);

  ProjectionGradients out;
  KernelGradients g = kernel_adjoints(proj.kernel, Z, Xq, Kuu_bar, Kuf_bar, residual_bar);
  // Jitter scales with mean(diag Kuu), which equals the kernel variance.
  g.log_params(0) += proj.chol.jitter * Kuu_bar.trace();
  out.log_kernel = std::move(g.log_params);
  out.Z = std::move(g.Z);
  return out;
}

ExpectedLogLik expected_log_likelihood(const ModelSpec& model, const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma) {
  const Eigen::Index N = mu.rows();
  const int P = model.num_latent();
  const Eigen::MatrixXd floored = gamma.cwiseMax(kMinVariance);

  ExpectedLogLik out;
  out.dtheta = Eigen::VectorXd::Zero(model.num_theta());
  const LikelihoodSpec lik = model.likelihood_at(theta);
  if (const auto* rm = std::get_if<RobustMax>(&lik)) {
    MultiExpectations e = robustmax_expectations(*rm, model.data.y, mu, floored);
    out.value = e.value.sum();
    out.dmu = std::move(e.dmu);
    out.dgamma = std::move(e.dgamma);
  } else {
    Expectations e = variational_expectations(lik, model.data.y, mu.col(0), floored.col(0));
    out.value = e.value.sum();
    out.dmu = e.dmu;
    out.dgamma = e.dgamma;
    if (model.samples_noise()) {
      out.dtheta(model.num_kernel_params()) = e.dlog_noise.sum();
    }
  }
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int p = 0; p < P; ++p) {
      if (gamma(n, p) <= kMinVariance) out.dgamma(n, p) = 0.0;
    }
  }
  return out;
}

Moments conditional_moments(const ModelSpec& model, const WhitenedState& state,
                            const Eigen::MatrixXd& Xq) {
  if (state.v.rows() != model.num_inducing() || state.v.cols() != model.num_latent()) {
    throw DimensionMismatch("conditional_moments: v must be M x P");
  }
  const Projection proj = project(model.kernel_at(state.theta), model.Z, Xq);
  Moments m;
  m.mu = proj.A.transpose() * state.v;
  m.gamma = proj.residual.cwiseMax(0.0).replicate(1, state.v.cols());
  return m;
}

TargetValue log_qhat(const WhitenedState& state, const ModelSpec& model, bool with_z_gradient) {
  const Eigen::Index M = model.num_inducing();
  const int P = model.num_latent();
  if (state.v.rows() != M || state.v.cols() != P) {
    throw DimensionMismatch("log_qhat: v must be M x P");
  }
  if (state.theta.size() != model.num_theta()) {
    throw DimensionMismatch("log_qhat: theta has the wrong length");
  }
  const Eigen::MatrixXd& X = model.data.X;
  const Projection proj = project(model.kernel_at(state.theta), model.Z, X);

  const Eigen::MatrixXd mu = proj.A.transpose() * state.v;
  const Eigen::MatrixXd gamma = proj.residual.replicate(1, P);
  const ExpectedLogLik ell = expected_log_likelihood(model, state.theta, mu, gamma);

  Eigen::VectorXd dprior;
  const double prior = model.log_prior(state.theta, &dprior);

  TargetValue out;
  out.value = ell.value - 0.5 * state.v.squaredNorm() - 0.5 * kLog2Pi * static_cast<double>(M * P) +
              prior;
  out.dv = proj.A * ell.dmu - state.v;

  const Eigen::MatrixXd A_bar = state.v * ell.dmu.transpose();
  const Eigen::VectorXd residual_bar = ell.dgamma.rowwise().sum();
  ProjectionGradients g = backprop_projection(proj, model.Z, X, A_bar, residual_bar);

  out.dtheta = ell.dtheta + dprior;
  out.dtheta.head(model.num_kernel_params()) += g.log_kernel;
  if (with_z_gradient) out.dZ = std::move(g.Z);
  return out;
}

Eigen::MatrixXd unwhiten(const ModelSpec& model, const WhitenedState& state) {
  const CholeskyFactor chol = cholesky(kuu(model.kernel_at(state.theta), model.Z));
  if (state.v.rows() != chol.dim()) throw DimensionMismatch("unwhiten: v must have M rows");
  return chol.lower.triangularView<Eigen::Lower>() * state.v;
}

Eigen::VectorXd pack(const WhitenedState& state) {
  Eigen::VectorXd flat(state.v.size() + state.theta.size());
  flat.head(state.v.size()) = state.v.reshaped();
  flat.tail(state.theta.size()) = state.theta;
  return flat;
}

WhitenedState unpack(const Eigen::VectorXd& flat, Eigen::Index num_inducing, int num_latent) {
  const Eigen::Index nv = num_inducing * num_latent;
  if (flat.size() < nv) throw DimensionMismatch("unpack: coordinate vector too short");
  WhitenedState s;
  s.v = flat.head(nv).reshaped(num_inducing, num_latent);
  s.theta = flat.tail(flat.size() - nv);
  return s;
}

LogDensity make_target(const ModelSpec& model) {
  return [&model](const Eigen::VectorXd& x, Eigen::VectorXd& grad) -> double {
    try {
      const WhitenedState s = unpack(x, model.num_inducing(), model.num_latent());
      const TargetValue t = log_qhat(s, model);
      if (!std::isfinite(t.value)) return -std::numeric_limits<double>::infinity();
      grad.resize(x.size());
      grad.head(t.dv.size()) = t.dv.reshaped();
      grad.tail(t.dtheta.size()) = t.dtheta;
      if (!grad.allFinite()) return -std::numeric_limits<double>::infinity();
      return t.value;
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
}

}  // namespace vsgp
