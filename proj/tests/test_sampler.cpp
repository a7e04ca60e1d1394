#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "vsgp/io.hpp"
#include "vsgp/sampler.hpp"

using namespace vsgp;

namespace {

LogDensity standard_normal() {
  return [](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad = -x;
    return -0.5 * x.squaredNorm();
  };
}

/// Correlated 2-D Gaussian with a non-identity precision.
LogDensity correlated_normal() {
  return [](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    Eigen::Matrix2d P;
    P << 2.0, -0.8, -0.8, 1.0;
    grad = -P * x;
    return -0.5 * x.dot(P * x);
  };
}

double lag1_autocorrelation(const Eigen::VectorXd& x) {
  const Eigen::VectorXd c = x.array() - x.mean();
  return c.head(c.size() - 1).dot(c.tail(c.size() - 1)) / c.squaredNorm();
}

double energy_error(double step, int steps) {
  const LogDensity target = correlated_normal();
  PhasePoint pt;
  pt.x = Eigen::Vector2d(1.0, -0.5);
  pt.p = Eigen::Vector2d(0.3, 0.9);
  pt.log_density = target(pt.x, pt.grad);
  const double h0 = -pt.log_density + 0.5 * pt.p.squaredNorm();
  leapfrog(target, pt, step, steps);
  return std::abs(-pt.log_density + 0.5 * pt.p.squaredNorm() - h0);
}

}  // namespace

TEST_CASE("HMC reproduces standard-normal moments in 10 dimensions") {
  HmcConfig c;
  c.step_size = 0.3;
  c.max_leapfrog = 10;
  c.iterations = 6000;
  c.burn_in = 500;
  c.seed = 1;
  const Chain chain = hmc_run(standard_normal(), Eigen::VectorXd::Constant(10, 2.0), c);
  CHECK(chain.size() == 5500);
  const Eigen::RowVectorXd mean = chain.states.colwise().mean();
  const Eigen::MatrixXd centred = chain.states.rowwise() - mean;
  const Eigen::RowVectorXd var = centred.colwise().squaredNorm() / (chain.size() - 1.0);
  CHECK(mean.cwiseAbs().maxCoeff() <= 0.06);
  CHECK((var.array() - 1.0).abs().maxCoeff() <= 0.12);
  CHECK(chain.acceptance_rate() > 0.8);
}

TEST_CASE("leapfrog is reversible and its energy error is second order") {
  const LogDensity target = correlated_normal();
  PhasePoint pt;
  pt.x = Eigen::Vector2d(0.4, -1.2);
  pt.p = Eigen::Vector2d(-0.7, 0.2);
  pt.log_density = target(pt.x, pt.grad);
  const Eigen::VectorXd x0 = pt.x;
  const Eigen::VectorXd p0 = pt.p;
  REQUIRE(leapfrog(target, pt, 0.1, 37));
  pt.p = -pt.p;
  REQUIRE(leapfrog(target, pt, 0.1, 37));
  CHECK((pt.x - x0).norm() <= 1e-8);
  CHECK((pt.p + p0).norm() <= 1e-8);

  for (double step : {0.2, 0.1, 0.05}) {
    const int steps = static_cast<int>(std::lround(2.0 / step));
    const double ratio = energy_error(step, steps) / energy_error(step / 2, 2 * steps);
    CAPTURE(step);
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.15));
  }
}

TEST_CASE("acceptance limits") {
  HmcConfig c;
  c.iterations = 400;
  c.burn_in = 0;
  c.seed = 3;

  c.step_size = 0.0;
  const Chain frozen = hmc_run(standard_normal(), Eigen::VectorXd::Constant(3, 0.7), c);
  CHECK(frozen.acceptance_rate() == 1.0);
  CHECK((frozen.states.rowwise() - frozen.states.row(0)).cwiseAbs().maxCoeff() == 0.0);

  c.step_size = 1e3;
  const Chain wild = hmc_run(standard_normal(), Eigen::VectorXd::Constant(3, 0.7), c);
  CHECK(wild.acceptance_rate() <= 0.01);

  c.step_size = 1e-3;
  c.max_leapfrog = 1;
  c.iterations = 2000;
  const Chain sticky = hmc_run(standard_normal(), Eigen::VectorXd::Zero(3), c);
  CHECK(lag1_autocorrelation(sticky.states.col(0)) > 0.9);
}

TEST_CASE("HMC is deterministic given its seed and rejects bad starts") {
  HmcConfig c;
  c.iterations = 200;
  c.burn_in = 50;
  c.seed = 42;
  const Chain a = hmc_run(correlated_normal(), Eigen::Vector2d(1, 1), c);
  const Chain b = hmc_run(correlated_normal(), Eigen::Vector2d(1, 1), c);
  CHECK(a.states == b.states);
  CHECK(a.accepted == b.accepted);
  c.seed = 43;
  CHECK(hmc_run(correlated_normal(), Eigen::Vector2d(1, 1), c).states != a.states);

  const LogDensity broken = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
    g.setZero(1);
    return -std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(hmc_run(broken, Eigen::VectorXd::Zero(1), c), SamplerError);
  c.burn_in = c.iterations;
  CHECK_THROWS(hmc_run(correlated_normal(), Eigen::Vector2d(1, 1), c));
}

TEST_CASE("expected squared jump") {
  Eigen::MatrixXd s(3, 2);
  s << 1, 0, 1, 0, 1, 2;
  CHECK(expected_squared_jump(Eigen::Vector2d(0, 0), s) == doctest::Approx((1.0 + 0.0 + 4.0) / 3.0));
}

TEST_CASE("tuning") {
  TuneConfig t;
  t.candidates = 1;
  t.samples_per_candidate = 20;
  t.seed = 5;
  const TuneReport one = tune(standard_normal(), Eigen::VectorXd::Zero(2), t);
  REQUIRE(one.candidates.size() == 1);
  CHECK(one.best.step_size == one.candidates[0].step_size);
  CHECK(one.best.max_leapfrog == one.candidates[0].max_leapfrog);

  TuneConfig never = t;
  never.candidates = 4;
  never.min_step = 1e3;
  never.max_step = 1e3;
  const TuneReport stuck = tune(standard_normal(), Eigen::VectorXd::Zero(2), never);
  for (const auto& cand : stuck.candidates) {
    CHECK(cand.score == 0.0);
    CHECK(cand.acceptance == 0.0);
  }

  TuneConfig full;
  full.candidates = 30;
  full.samples_per_candidate = 50;
  full.seed = 11;
  HmcConfig base;
  base.iterations = 3000;
  base.burn_in = 0;
  base.seed = 12;
  const TuneReport r = tune(standard_normal(), Eigen::VectorXd::Zero(1), full, base);
  CHECK(r.candidates.size() == 30);
  CHECK(r.best.iterations == 3000);
  const Chain check = hmc_run(standard_normal(), Eigen::VectorXd::Zero(1), r.best);
  CHECK(check.acceptance_rate() >= 0.5);
  CHECK(check.acceptance_rate() <= 0.95);

  const TuneReport again = tune(standard_normal(), Eigen::VectorXd::Zero(1), full, base);
  CHECK(again.best.step_size == r.best.step_size);
  CHECK(again.best.max_leapfrog == r.best.max_leapfrog);
}

TEST_CASE("Gibbs baseline") {
  std::mt19937_64 rng(21);
  const ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 25, 4, 1, rng);
  WhitenedState init{Eigen::MatrixXd::Zero(4, 1), m.make_theta(KernelParams::rbf(1.0, 1.0))};

  GibbsConfig g;
  g.v_sampler.step_size = 0.2;
  g.v_sampler.max_leapfrog = 5;
  g.theta_step = 0.15;
  g.iterations = 400;
  g.burn_in = 100;
  g.seed = 3;
  const Chain chain = gibbs_run(m, init, g);
  CHECK(chain.size() == 300);
  CHECK(chain.accepted_theta.size() == 300);
  CHECK(chain.theta_acceptance_rate() > 0.0);
  CHECK(chain.acceptance_rate() > 0.0);
  const Chain same = gibbs_run(m, init, g);
  CHECK(same.states == chain.states);

  g.theta_step = 1e6;
  const Chain frozen = gibbs_run(m, init, g);
  CHECK(frozen.theta_acceptance_rate() == 0.0);
  const Eigen::Index T = m.num_theta();
  for (Eigen::Index i = 0; i < frozen.size(); ++i) {
    CHECK(frozen.states.row(i).tail(T) == init.theta.transpose());
  }
  CHECK((frozen.states.col(0).array() - frozen.states(0, 0)).abs().maxCoeff() > 0.0);

  // theta_mh_step leaves the state untouched on rejection
  WhitenedState s = init;
  double lp = log_qhat(s, m).value;
  std::mt19937_64 r2(1);
  const bool moved = detail::theta_mh_step(m, s, lp, 1e6, r2);
  CHECK_FALSE(moved);
  CHECK(s.theta == init.theta);

  const LogDensity cond = detail::conditional_v_target(m, init.theta);
  Eigen::VectorXd grad;
  const double value = cond(init.v.reshaped(), grad);
  CHECK(value == doctest::Approx(log_qhat(init, m).value));
  CHECK(grad.size() == 4);
}

TEST_CASE("Gibbs and HMC agree on a small Gaussian-likelihood posterior") {
  std::mt19937_64 rng(22);
  const ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 20, 3, 1, rng);
  const WhitenedState init{Eigen::MatrixXd::Zero(3, 1), m.make_theta(KernelParams::rbf(1.0, 1.0))};

  HmcConfig h;
  h.step_size = 0.15;
  h.max_leapfrog = 15;
  h.iterations = 6000;
  h.burn_in = 1000;
  h.seed = 8;
  const Chain hmc = hmc_run(make_target(m), pack(init), h);

  GibbsConfig g;
  g.v_sampler.step_size = 0.2;
  g.v_sampler.max_leapfrog = 10;
  g.theta_step = 0.3;
  g.iterations = 12000;
  g.burn_in = 2000;
  g.seed = 9;
  const Chain gibbs = gibbs_run(m, init, g);

  const Eigen::RowVectorXd a = hmc.states.colwise().mean();
  const Eigen::RowVectorXd b = gibbs.states.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((hmc.states.rowwise() - a).colwise().squaredNorm() / (hmc.size() - 1.0)).cwiseSqrt();
  CHECK(((a - b).cwiseQuotient(sd)).cwiseAbs().maxCoeff() <= 0.25);
}

TEST_CASE("chain file round trip") {
  HmcConfig c;
  c.iterations = 30;
  c.burn_in = 10;
  c.seed = 2;
  Chain chain = hmc_run(correlated_normal(), Eigen::Vector2d(0.1, 0.2), c);
  chain.wall_clock_seconds = 0.125;
  const auto path = std::filesystem::temp_directory_path() / "vsgp_test_chain.txt";
  write_chain(path, chain, {"a", "b"});
  const Chain back = read_chain(path);
  CHECK(back.states == chain.states);
  CHECK(back.log_density == chain.log_density);
  CHECK(back.iteration == chain.iteration);
  CHECK(back.accepted == chain.accepted);
  CHECK(back.accepted_theta.empty());
  CHECK(back.wall_clock_seconds == 0.125);
  CHECK(back.config.step_size == chain.config.step_size);
  CHECK(back.config.seed == chain.config.seed);
  CHECK_THROWS(write_chain(path, chain, {"only-one"}));
  std::filesystem::remove(path);
}
