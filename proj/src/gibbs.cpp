#include <chrono>
#include <cmath>
#include <limits>

#include "vsgp/sampler.hpp"

namespace vsgp {

namespace detail {

namespace {

double value_at(const ModelSpec& model, const WhitenedState& state) {
  try {
    const double v = log_qhat(state, model).value;
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const std::exception&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

bool theta_mh_step(const ModelSpec& model, WhitenedState& state, double& log_density, double step,
                   std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  WhitenedState proposal{state.v, state.theta};
  for (Eigen::Index i = 0; i < proposal.theta.size(); ++i) proposal.theta(i) += step * normal(rng);
  const double log_u = std::log(uniform(rng));
  const double candidate = value_at(model, proposal);
  if (std::isfinite(candidate) && log_u < candidate - log_density) {
    state.theta = std::move(proposal.theta);
    log_density = candidate;
    return true;
  }
  return false;
}

LogDensity conditional_v_target(const ModelSpec& model, const Eigen::VectorXd& theta) {
  return [&model, theta](const Eigen::VectorXd& x, Eigen::VectorXd& grad) -> double {
    try {
      WhitenedState s{x.reshaped(model.num_inducing(), model.num_latent()), theta};
      const TargetValue t = log_qhat(s, model);
      if (!std::isfinite(t.value)) return -std::numeric_limits<double>::infinity();
      grad = t.dv.reshaped();
      return t.value;
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
}

}  // namespace detail

Chain gibbs_run(const ModelSpec& model, const WhitenedState& init, const GibbsConfig& config) {
  if (config.iterations < 1 || config.burn_in < 0 || config.burn_in >= config.iterations) {
    throw std::invalid_argument("Gibbs needs 0 <= burn_in < iterations");
  }
  if (!(config.theta_step >= 0.0)) throw std::invalid_argument("theta step must be nonnegative");
  const auto started = std::chrono::steady_clock::now();

  WhitenedState state = init;
  double log_density = -std::numeric_limits<double>::infinity();
  try {
    log_density = log_qhat(state, model).value;
  } catch (const std::exception&) {
  }
  if (!std::isfinite(log_density)) throw SamplerError("target is not finite at the initial state");

  std::mt19937_64 rng(config.seed);
  const int kept = config.iterations - config.burn_in;
  const Eigen::Index nv = state.v.size();
  Chain chain;
  chain.config = config.v_sampler;
  chain.config.iterations = config.iterations;
  chain.config.burn_in = config.burn_in;
  chain.config.seed = config.seed;
  chain.states.resize(kept, nv + state.theta.size());
  chain.log_density.resize(kept);

  PhasePoint point;
  point.x = state.v.reshaped();
  point.p = Eigen::VectorXd::Zero(nv);
  point.grad = Eigen::VectorXd::Zero(nv);

  for (int it = 0; it < config.iterations; ++it) {
    const LogDensity v_target = detail::conditional_v_target(model, state.theta);
    point.log_density = v_target(point.x, point.grad);
    const bool v_ok =
        std::isfinite(point.log_density) &&
        hmc_step(v_target, point, config.v_sampler.step_size, config.v_sampler.max_leapfrog, rng);
    state.v = point.x.reshaped(state.v.rows(), state.v.cols());
    if (v_ok) log_density = point.log_density;

    const bool theta_ok = detail::theta_mh_step(model, state, log_density, config.theta_step, rng);

    if (it >= config.burn_in) {
      const Eigen::Index row = it - config.burn_in;
      chain.states.row(row).head(nv) = point.x.transpose();
      chain.states.row(row).tail(state.theta.size()) = state.theta.transpose();
      chain.log_density(row) = log_density;
      chain.iteration.push_back(it);
      chain.accepted.push_back(v_ok ? 1 : 0);
      chain.accepted_theta.push_back(theta_ok ? 1 : 0);
    }
  }
  chain.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return chain;
}

}  // namespace vsgp
