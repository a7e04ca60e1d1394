#include <chrono>
#include <cmath>

#include "vsgp/sampler.hpp"

namespace vsgp {

void HmcConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("HMC step size must be finite and nonnegative");
  }
  if (max_leapfrog < 1) throw std::invalid_argument("HMC needs max_leapfrog >= 1");
  if (iterations < 1) throw std::invalid_argument("HMC needs at least one iteration");
  if (burn_in < 0 || burn_in >= iterations) {
    throw std::invalid_argument("burn-in must be in [0, iterations)");
  }
}

double Chain::acceptance_rate() const {
  if (accepted.empty()) return 0.0;
  double n = 0.0;
  for (auto a : accepted) n += a;
  return n / static_cast<double>(accepted.size());
}

double Chain::theta_acceptance_rate() const {
  if (accepted_theta.empty()) return 0.0;
  double n = 0.0;
  for (auto a : accepted_theta) n += a;
  return n / static_cast<double>(accepted_theta.size());
}

bool leapfrog(const LogDensity& target, PhasePoint& point, double step_size, int steps) {
  for (int s = 0; s < steps; ++s) {
    point.p.noalias() += 0.5 * step_size * point.grad;
    point.x.noalias() += step_size * point.p;
    point.log_density = target(point.x, point.grad);
    if (!std::isfinite(point.log_density)) return false;
    point.p.noalias() += 0.5 * step_size * point.grad;
  }
  return true;
}

bool hmc_step(const LogDensity& target, PhasePoint& current, double step_size, int max_leapfrog,
              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> length(1, max_leapfrog);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  PhasePoint proposal = current;
  for (Eigen::Index i = 0; i < proposal.p.size(); ++i) proposal.p(i) = normal(rng);
  const int steps = length(rng);
  const double log_u = std::log(uniform(rng));

  const double h0 = -current.log_density + 0.5 * proposal.p.squaredNorm();
  if (!leapfrog(target, proposal, step_size, steps)) return false;
  const double h1 = -proposal.log_density + 0.5 * proposal.p.squaredNorm();
  if (!std::isfinite(h1) || !proposal.grad.allFinite()) return false;
  if (log_u < h0 - h1) {
    current.x = std::move(proposal.x);
    current.grad = std::move(proposal.grad);
    current.log_density = proposal.log_density;
    return true;
  }
  return false;
}

Chain hmc_run(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  PhasePoint point;
  point.x = init;
  point.p = Eigen::VectorXd::Zero(init.size());
  point.grad = Eigen::VectorXd::Zero(init.size());
  point.log_density = target(point.x, point.grad);
  if (!std::isfinite(point.log_density) || !point.grad.allFinite()) {
    throw SamplerError("target is not finite at the initial state");
  }

  std::mt19937_64 rng(config.seed);
  const int kept = config.iterations - config.burn_in;
  Chain chain;
  chain.config = config;
  chain.states.resize(kept, init.size());
  chain.log_density.resize(kept);
  chain.iteration.reserve(static_cast<std::size_t>(kept));
  chain.accepted.reserve(static_cast<std::size_t>(kept));

  for (int it = 0; it < config.iterations; ++it) {
    const bool ok = hmc_step(target, point, config.step_size, config.max_leapfrog, rng);
    if (it >= config.burn_in) {
      const Eigen::Index row = it - config.burn_in;
      chain.states.row(row) = point.x.transpose();
      chain.log_density(row) = point.log_density;
      chain.iteration.push_back(it);
      chain.accepted.push_back(ok ? 1 : 0);
    }
  }
  chain.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return chain;
}

}  // namespace vsgp
