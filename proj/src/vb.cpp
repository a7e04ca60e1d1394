#include "vsgp/vb.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <ceres/ceres.h>

#include "vsgp/linalg.hpp"
#include "vsgp/objective.hpp"

namespace vsgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Flat layout for the optimizer:
//   [vec(m), per latent function the lower triangle of L column by column
//    with log-diagonal, theta (optional), vec(Z) (optional)].
struct Layout {
  Eigen::Index M = 0;
  int P = 0;
  Eigen::Index D = 0;
  Eigen::Index ntheta = 0;
  bool with_theta = true;
  bool with_z = false;

  Eigen::Index tri() const { return M * (M + 1) / 2; }
  Eigen::Index size() const {
    return M * P + P * tri() + (with_theta ? ntheta : 0) + (with_z ? M * D : 0);
  }

  Eigen::VectorXd pack(const GaussianApprox& q) const {
    Eigen::VectorXd x(size());
    Eigen::Index k = 0;
    x.segment(k, M * P) = q.m.reshaped();
    k += M * P;
    for (int p = 0; p < P; ++p) {
      for (Eigen::Index j = 0; j < M; ++j) {
        x(k++) = std::log(q.L[static_cast<std::size_t>(p)](j, j));
        for (Eigen::Index i = j + 1; i < M; ++i) x(k++) = q.L[static_cast<std::size_t>(p)](i, j);
      }
    }
    if (with_theta) {
      x.segment(k, ntheta) = q.theta;
      k += ntheta;
    }
    if (with_z) x.segment(k, M * D) = q.Z.reshaped();
    return x;
  }

  GaussianApprox unpack(const double* x, const GaussianApprox& fixed) const {
    GaussianApprox q;
    Eigen::Index k = 0;
    q.m = Eigen::Map<const Eigen::MatrixXd>(x, M, P);
    k += M * P;
    q.L.assign(static_cast<std::size_t>(P), Eigen::MatrixXd::Zero(M, M));
    for (int p = 0; p < P; ++p) {
      for (Eigen::Index j = 0; j < M; ++j) {
        q.L[static_cast<std::size_t>(p)](j, j) = std::exp(x[k++]);
        for (Eigen::Index i = j + 1; i < M; ++i) q.L[static_cast<std::size_t>(p)](i, j) = x[k++];
      }
    }
    if (with_theta) {
      q.theta = Eigen::Map<const Eigen::VectorXd>(x + k, ntheta);
      k += ntheta;
    } else {
      q.theta = fixed.theta;
    }
    if (with_z) {
      q.Z = Eigen::Map<const Eigen::MatrixXd>(x + k, M, D);
    } else {
      q.Z = fixed.Z;
    }
    return q;
  }

  // Gradient of the ELBO in the flat coordinates.
  Eigen::VectorXd gradient(const GaussianApprox& q, const ElboValue& e) const {
    Eigen::VectorXd g(size());
    Eigen::Index k = 0;
    g.segment(k, M * P) = e.dm.reshaped();
    k += M * P;
    for (int p = 0; p < P; ++p) {
      const auto& L = q.L[static_cast<std::size_t>(p)];
      const auto& dL = e.dL[static_cast<std::size_t>(p)];
      for (Eigen::Index j = 0; j < M; ++j) {
        g(k++) = dL(j, j) * L(j, j);
        for (Eigen::Index i = j + 1; i < M; ++i) g(k++) = dL(i, j);
      }
    }
    if (with_theta) {
      g.segment(k, ntheta) = e.dtheta;
      k += ntheta;
    }
    if (with_z) g.segment(k, M * D) = e.dZ.reshaped();
    return g;
  }
};

class NegativeElbo final : public ceres::FirstOrderFunction {
 public:
  NegativeElbo(const ModelSpec& model, Layout layout, GaussianApprox fixed)
      : model_(model), layout_(layout), fixed_(std::move(fixed)) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    try {
      const GaussianApprox q = layout_.unpack(parameters, fixed_);
      const ElboValue e = elbo(q, model_);
      if (!std::isfinite(e.value)) return false;
      *cost = -e.value;
      if (gradient) {
        const Eigen::VectorXd g = layout_.gradient(q, e);
        if (!g.allFinite()) return false;
        Eigen::Map<Eigen::VectorXd>(gradient, layout_.size()) = -g;
      }
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  int NumParameters() const override { return static_cast<int>(layout_.size()); }

 private:
  const ModelSpec& model_;
  Layout layout_;
  GaussianApprox fixed_;
};

class TraceRecorder final : public ceres::IterationCallback {
 public:
  explicit TraceRecorder(std::vector<double>& trace) : trace_(trace) {}
  ceres::CallbackReturnType operator()(const ceres::IterationSummary& summary) override {
    if (summary.iteration == 0 || summary.step_is_successful) trace_.push_back(-summary.cost);
    return ceres::SOLVER_CONTINUE;
  }

 private:
  std::vector<double>& trace_;
};

struct PhaseResult {
  GaussianApprox approx;
  double value;
  int iterations;
};

PhaseResult run_adam(const ModelSpec& model, const Layout& layout, const GaussianApprox& start,
                     int max_iterations, double tolerance, double rate, std::vector<double>& trace) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  Eigen::VectorXd x = layout.pack(start);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(x.size());
  PhaseResult best{start, -std::numeric_limits<double>::infinity(), 0};
  for (int it = 1; it <= max_iterations; ++it) {
    const GaussianApprox q = layout.unpack(x.data(), start);
    const ElboValue e = elbo(q, model);
    if (!std::isfinite(e.value)) {
      throw NonFiniteElbo("ELBO became non-finite at Adam iteration " + std::to_string(it), q);
    }
    if (e.value > best.value) {
      best.approx = q;
      best.value = e.value;
      trace.push_back(e.value);
    }
    best.iterations = it;
    const Eigen::VectorXd g = layout.gradient(q, e);
    if (g.lpNorm<Eigen::Infinity>() < tolerance) break;
    m1 = beta1 * m1 + (1.0 - beta1) * g;
    m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, it);
    const double c2 = 1.0 - std::pow(beta2, it);
    x.array() += rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  }
  return best;
}

PhaseResult run_lbfgs(const ModelSpec& model, const Layout& layout, const GaussianApprox& start,
                      int max_iterations, double tolerance, double adam_rate,
                      std::vector<double>& trace) {
  constexpr int kRescueIterations = 200;
  Eigen::VectorXd x = layout.pack(start);
  ceres::GradientProblem problem(new NegativeElbo(model, layout, start));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.gradient_tolerance = tolerance;
  options.function_tolerance = 1e-15;
  options.parameter_tolerance = 1e-15;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  TraceRecorder recorder(trace);
  options.callbacks.push_back(&recorder);

  // The line search gives up in sharply curved regions, typically when two
  // inducing points nearly coincide. A burst of Adam steps moves the iterate
  // out of the region before L-BFGS resumes with a fresh memory.
  int used = 0;
  double cost = std::numeric_limits<double>::infinity();
  while (used < max_iterations) {
    options.max_num_iterations = max_iterations - used;
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(options, problem, x.data(), &summary);
    used += std::max(1, static_cast<int>(summary.iterations.size()) - 1);
    cost = std::min(cost, summary.final_cost);
    if (summary.iterations.empty() || summary.iterations.back().gradient_max_norm <= tolerance) break;
    if (summary.termination_type == ceres::NO_CONVERGENCE || used >= max_iterations) break;

    const int burst = std::min(kRescueIterations, max_iterations - used);
    std::vector<double> burst_trace;
    const PhaseResult r = run_adam(model, layout, layout.unpack(x.data(), start), burst, tolerance,
                                   adam_rate, burst_trace);
    used += r.iterations;
    if (!(-r.value < cost - 1e-9 * std::max(1.0, std::abs(cost)))) break;
    for (double v : burst_trace) {
      if (v > trace.back()) trace.push_back(v);
    }
    cost = -r.value;
    x = layout.pack(r.approx);
  }
  return {layout.unpack(x.data(), start), -cost, used};
}

}  // namespace

void GaussianApprox::validate(const ModelSpec& model) const {
  const Eigen::Index M = m.rows();
  if (m.cols() != model.num_latent()) throw DimensionMismatch("approximation has wrong P");
  if (static_cast<int>(L.size()) != model.num_latent()) {
    throw DimensionMismatch("approximation needs one factor per latent function");
  }
  if (theta.size() != model.num_theta()) throw DimensionMismatch("approximation theta length");
  if (Z.rows() != M || Z.cols() != model.data.input_dim()) {
    throw DimensionMismatch("approximation Z must be M x D");
  }
  for (const auto& f : L) {
    if (f.rows() != M || f.cols() != M) throw DimensionMismatch("factor must be M x M");
    if (!(f.diagonal().array() > 0.0).all()) {
      throw std::invalid_argument("factor diagonal must be positive");
    }
    for (Eigen::Index j = 1; j < M; ++j) {
      if (f.col(j).head(j).cwiseAbs().maxCoeff() != 0.0) {
        throw std::invalid_argument("factor must be lower triangular");
      }
    }
  }
}

GaussianApprox prior_approx(const ModelSpec& model, const Eigen::VectorXd& theta) {
  GaussianApprox q;
  const Eigen::Index M = model.num_inducing();
  q.m = Eigen::MatrixXd::Zero(M, model.num_latent());
  q.L.assign(static_cast<std::size_t>(model.num_latent()), Eigen::MatrixXd::Identity(M, M));
  q.theta = theta;
  q.Z = model.Z;
  return q;
}

ElboValue elbo(const GaussianApprox& approx, const ModelSpec& model) {
  approx.validate(model);
  const Eigen::Index M = approx.num_inducing();
  const int P = approx.num_latent();
  const Eigen::MatrixXd& X = model.data.X;

  const Projection proj = project(model.kernel_at(approx.theta), approx.Z, X);
  const Eigen::MatrixXd mu = proj.A.transpose() * approx.m;
  Eigen::MatrixXd gamma(X.rows(), P);
  std::vector<Eigen::MatrixXd> S(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p) {
    const auto& L = approx.L[static_cast<std::size_t>(p)];
    S[static_cast<std::size_t>(p)] = proj.A.transpose() * L.triangularView<Eigen::Lower>();
    gamma.col(p) = proj.residual + S[static_cast<std::size_t>(p)].rowwise().squaredNorm();
  }
  const ExpectedLogLik ell = expected_log_likelihood(model, approx.theta, mu, gamma);

  ElboValue out;
  out.expected_log_lik = ell.value;
  out.dm = proj.A * ell.dmu - approx.m;
  out.dL.resize(static_cast<std::size_t>(P));
  Eigen::MatrixXd A_bar = approx.m * ell.dmu.transpose();
  Eigen::VectorXd residual_bar = Eigen::VectorXd::Zero(X.rows());
  for (int p = 0; p < P; ++p) {
    const auto& L = approx.L[static_cast<std::size_t>(p)];
    const auto& Sp = S[static_cast<std::size_t>(p)];
    const Eigen::VectorXd d = ell.dgamma.col(p);
    out.kl += 0.5 * (approx.m.col(p).squaredNorm() + L.squaredNorm() - static_cast<double>(M) -
                     2.0 * L.diagonal().array().log().sum());

    const Eigen::MatrixXd weighted = d.asDiagonal() * Sp;  // N x M
    Eigen::MatrixXd dL = 2.0 * proj.A * weighted;
    dL -= L;
    dL.diagonal() += L.diagonal().cwiseInverse();
    out.dL[static_cast<std::size_t>(p)] = dL.triangularView<Eigen::Lower>();

    A_bar.noalias() += 2.0 * L * weighted.transpose();
    residual_bar += d;
  }

  Eigen::VectorXd dprior;
  out.log_prior = model.log_prior(approx.theta, &dprior);
  out.value = out.expected_log_lik - out.kl + out.log_prior;

  ProjectionGradients g = backprop_projection(proj, approx.Z, X, A_bar, residual_bar);
  out.dtheta = ell.dtheta + dprior;
  out.dtheta.head(model.num_kernel_params()) += g.log_kernel;
  out.dZ = std::move(g.Z);
  return out;
}

VbFit fit(const ModelSpec& model, const Eigen::VectorXd& theta0, const VbConfig& config) {
  model.validate();
  if (theta0.size() != model.num_theta()) throw DimensionMismatch("fit: theta0 has wrong length");
  const Eigen::Index M = model.num_inducing();
  const int P = model.num_latent();

  GaussianApprox start;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  start.m.resize(M, P);
  for (Eigen::Index j = 0; j < P; ++j) {
    for (Eigen::Index i = 0; i < M; ++i) start.m(i, j) = normal(rng);
  }
  start.L.assign(static_cast<std::size_t>(P), 0.1 * Eigen::MatrixXd::Identity(M, M));
  start.theta = theta0;
  start.Z = model.Z;

  const double initial = elbo(start, model).value;
  if (!std::isfinite(initial)) throw NonFiniteElbo("ELBO is non-finite at the initial point", start);

  Layout layout{M, P, model.data.input_dim(), model.num_theta(), config.optimize_theta, false};
  VbFit result;

  auto run = [&](const Layout& lay, const GaussianApprox& from, int iterations) {
    if (config.optimizer == OptimizerKind::Lbfgs) {
      return run_lbfgs(model, lay, from, iterations, config.gradient_tolerance,
                       config.adam_learning_rate, result.trace);
    }
    return run_adam(model, lay, from, iterations, config.gradient_tolerance,
                    config.adam_learning_rate, result.trace);
  };

  PhaseResult a{start, initial, 0};
  if (config.phase_a_iterations > 0) a = run(layout, start, config.phase_a_iterations);
  result.phase_a_elbo = a.value;

  PhaseResult b = a;
  if (config.max_iterations > 0) {
    layout.with_z = config.optimize_z;
    b = run(layout, a.approx, config.max_iterations);
    if (!(b.value >= a.value)) b = a;
  }
  result.approx = std::move(b.approx);
  result.elbo = b.value;
  result.iterations = a.iterations + b.iterations;
  return result;
}

GaussianApprox optimal_gaussian_approx(const ModelSpec& model, const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& Z) {
  if (!model.samples_noise()) {
    throw std::invalid_argument("optimal_gaussian_approx needs a Gaussian likelihood");
  }
  const double noise = std::get<Gaussian>(model.likelihood_at(theta)).noise_variance;
  const Projection proj = project(model.kernel_at(theta), Z, model.data.X);
  const Eigen::Index M = Z.rows();
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(M, M);
  precision.noalias() += proj.A * proj.A.transpose() / noise;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(M, M));
  cov = 0.5 * (cov + cov.transpose());

  GaussianApprox q;
  q.m = llt.solve(proj.A * model.data.y / noise);
  q.L = {cholesky(cov).lower};
  q.theta = theta;
  q.Z = Z;
  return q;
}

double dense_log_marginal_likelihood(const ModelSpec& model, const Eigen::VectorXd& theta) {
  if (!model.samples_noise()) {
    throw std::invalid_argument("dense marginal likelihood needs a Gaussian likelihood");
  }
  const double noise = std::get<Gaussian>(model.likelihood_at(theta)).noise_variance;
  const Eigen::MatrixXd& X = model.data.X;
  Eigen::MatrixXd K = kuu(model.kernel_at(theta), X);
  K.diagonal().array() += noise;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("dense covariance not PD");
  const Eigen::VectorXd alpha = llt.matrixL().solve(model.data.y);
  const Eigen::MatrixXd L = llt.matrixL();
  return -0.5 * alpha.squaredNorm() - L.diagonal().array().log().sum() -
         0.5 * kLog2Pi * static_cast<double>(X.rows());
}

BoundReport elbo_bound_check(const GaussianApprox& approx, const ModelSpec& model) {
  const ElboValue e = elbo(approx, model);
  BoundReport r;
  r.elbo = e.value - e.log_prior;
  r.log_marginal = dense_log_marginal_likelihood(model, approx.theta);
  r.gap = r.log_marginal - r.elbo;
  return r;
}

}  // namespace vsgp
