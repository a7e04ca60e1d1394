#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "vsgp/sampler.hpp"

namespace vsgp {

double expected_squared_jump(const Eigen::VectorXd& start, const Eigen::MatrixXd& states) {
  if (states.rows() == 0) return 0.0;
  double total = (states.row(0).transpose() - start).squaredNorm();
  for (Eigen::Index t = 1; t < states.rows(); ++t) {
    total += (states.row(t) - states.row(t - 1)).squaredNorm();
  }
  return total / static_cast<double>(states.rows());
}

namespace {

// Shared proposal schedule: uniform exploration for the first half of the
// budget, then Gaussian perturbation of the incumbent in log step size and a
// one-notch move on the leapfrog grid.
struct Proposer {
  const TuneConfig& config;
  std::mt19937_64 rng;

  TuneCandidate next(int index, const TuneCandidate* incumbent) {
    const double lo = std::log(config.min_step);
    const double hi = std::log(config.max_step);
    const auto& grid = config.max_leapfrog_grid;
    const int explore = (config.candidates + 1) / 2;
    TuneCandidate c;
    if (index < explore || incumbent == nullptr) {
      std::uniform_real_distribution<double> u(lo, hi);
      std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
      c.step_size = std::exp(u(rng));
      c.max_leapfrog = grid[pick(rng)];
    } else {
      std::normal_distribution<double> jitter(0.0, 0.3);
      c.step_size = std::exp(std::clamp(std::log(incumbent->step_size) + jitter(rng), lo, hi));
      const auto at = std::find(grid.begin(), grid.end(), incumbent->max_leapfrog);
      auto pos = static_cast<long>(at == grid.end() ? 0 : at - grid.begin());
      std::uniform_int_distribution<int> move(-1, 1);
      pos = std::clamp<long>(pos + move(rng), 0, static_cast<long>(grid.size()) - 1);
      c.max_leapfrog = grid[static_cast<std::size_t>(pos)];
    }
    return c;
  }
};

void check_config(const TuneConfig& config) {
  if (config.candidates < 1 || config.samples_per_candidate < 1) {
    throw std::invalid_argument("tuning budget must be at least one pilot of one sample");
  }
  if (config.max_leapfrog_grid.empty()) throw std::invalid_argument("empty leapfrog grid");
  if (!(config.min_step > 0.0) || !(config.max_step >= config.min_step)) {
    throw std::invalid_argument("tuning step range must satisfy 0 < min <= max");
  }
}

}  // namespace

TuneReport tune(const LogDensity& target, const Eigen::VectorXd& init, const TuneConfig& config,
                const HmcConfig& base) {
  check_config(config);
  Eigen::VectorXd probe(init.size());
  if (!std::isfinite(target(init, probe))) {
    throw SamplerError("tune: target is not finite at the initial state");
  }

  Proposer proposer{config, std::mt19937_64(config.seed)};
  TuneReport report;
  Eigen::VectorXd current = init;
  std::optional<std::size_t> best;

  for (int c = 0; c < config.candidates; ++c) {
    TuneCandidate cand = proposer.next(c, best ? &report.candidates[*best] : nullptr);
    HmcConfig pilot;
    pilot.step_size = cand.step_size;
    pilot.max_leapfrog = cand.max_leapfrog;
    pilot.iterations = config.samples_per_candidate;
    pilot.burn_in = 0;
    pilot.seed = config.seed + 1 + static_cast<std::uint64_t>(c);
    try {
      const Chain chain = hmc_run(target, current, pilot);
      cand.esjd = expected_squared_jump(current, chain.states);
      cand.acceptance = chain.acceptance_rate();
      cand.score = config.penalize_length ? cand.esjd / std::sqrt(static_cast<double>(cand.max_leapfrog))
                                          : cand.esjd;
      current = chain.states.row(chain.size() - 1).transpose();
    } catch (const SamplerError&) {
      cand.esjd = cand.score = std::numeric_limits<double>::quiet_NaN();
    }
    report.candidates.push_back(cand);
    if (std::isfinite(cand.score) && (!best || cand.score > report.candidates[*best].score)) {
      best = report.candidates.size() - 1;
    }
  }
  if (!best) {
    throw SamplerError("tune: every pilot run produced a non-finite score");
  }
  const TuneCandidate& incumbent = report.candidates[*best];
  report.best = base;
  report.best.step_size = incumbent.step_size;
  report.best.max_leapfrog = incumbent.max_leapfrog;
  report.final_state = current;
  return report;
}

GibbsTuneReport tune_gibbs(const ModelSpec& model, const WhitenedState& init, TuneConfig config,
                           const GibbsConfig& base) {
  check_config(config);
  GibbsTuneReport report;
  report.best = base;

  config.penalize_length = false;
  const LogDensity v_target = detail::conditional_v_target(model, init.theta);
  report.v_report = tune(v_target, init.v.reshaped(), config, base.v_sampler);
  report.best.v_sampler = report.v_report.best;

  double start_density = -std::numeric_limits<double>::infinity();
  try {
    start_density = log_qhat(init, model).value;
  } catch (const std::exception&) {
  }
  if (!std::isfinite(start_density)) {
    throw SamplerError("tune_gibbs: target is not finite at the initial state");
  }

  Proposer proposer{config, std::mt19937_64(config.seed ^ 0x9e3779b97f4a7c15ULL)};
  WhitenedState state = init;
  double log_density = start_density;
  std::optional<std::size_t> best;
  for (int c = 0; c < config.candidates; ++c) {
    TuneCandidate cand = proposer.next(c, best ? &report.theta_candidates[*best] : nullptr);
    cand.max_leapfrog = 1;
    std::mt19937_64 rng(config.seed + 1000003ULL + static_cast<std::uint64_t>(c));
    Eigen::VectorXd previous = state.theta;
    double total = 0.0;
    int accepted = 0;
    for (int s = 0; s < config.samples_per_candidate; ++s) {
      accepted += detail::theta_mh_step(model, state, log_density, cand.step_size, rng) ? 1 : 0;
      total += (state.theta - previous).squaredNorm();
      previous = state.theta;
    }
    cand.esjd = cand.score = total / config.samples_per_candidate;
    cand.acceptance = static_cast<double>(accepted) / config.samples_per_candidate;
    report.theta_candidates.push_back(cand);
    if (!best || cand.score > report.theta_candidates[*best].score) {
      best = report.theta_candidates.size() - 1;
    }
  }
  report.best.theta_step = report.theta_candidates[*best].step_size;
  return report;
}

}  // namespace vsgp
