#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>

#include "oracles.hpp"
#include "vsgp/objective.hpp"

using namespace vsgp;

namespace {

const char* kFamilies[] = {"gaussian", "poisson", "probit", "robustmax"};

WhitenedState random_state(const ModelSpec& m, std::mt19937_64& rng) {
  return {oracle::random_matrix(m.num_inducing(), m.num_latent(), rng, 0.7), oracle::random_theta(m, rng)};
}

double standard_normal_log_density(const Eigen::MatrixXd& v) {
  return -0.5 * v.squaredNorm() - 0.5 * std::log(2 * std::numbers::pi) * static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("log_qhat gradients match finite differences for every family and kernel") {
  std::mt19937_64 rng(101);
  for (const char* family : kFamilies) {
    for (KernelKind kind : {KernelKind::Rbf, KernelKind::Ard}) {
      for (int trial = 0; trial < 10; ++trial) {
        const ModelSpec m = oracle::random_model(family, kind, 30, 7, 2, rng);
        const WhitenedState s = random_state(m, rng);
        const TargetValue t = log_qhat(s, m, true);
        CAPTURE(family);
        CAPTURE(trial);

        auto by_v = [&](const Eigen::VectorXd& x) {
          return log_qhat({x.reshaped(s.v.rows(), s.v.cols()), s.theta}, m).value;
        };
        CHECK(oracle::rel_error(t.dv.reshaped(), oracle::fd_gradient(by_v, s.v.reshaped())) <= 1e-5);

        auto by_theta = [&](const Eigen::VectorXd& x) { return log_qhat({s.v, x}, m).value; };
        CHECK(oracle::rel_error(t.dtheta, oracle::fd_gradient(by_theta, s.theta)) <= 1e-5);

        auto by_z = [&](const Eigen::VectorXd& z) {
          ModelSpec mz = m;
          mz.Z = z.reshaped(m.Z.rows(), m.Z.cols());
          return log_qhat(s, mz).value;
        };
        CHECK(oracle::rel_error(t.dZ.reshaped(), oracle::fd_gradient(by_z, m.Z.reshaped())) <= 1e-5);
      }
    }
  }
}

TEST_CASE("conditional moments at zero v and at the inducing inputs") {
  std::mt19937_64 rng(5);
  ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 20, 6, 2, rng);
  WhitenedState s{Eigen::MatrixXd::Zero(6, 1), m.make_theta(KernelParams::rbf(1.5, 0.8))};
  const Moments at_x = conditional_moments(m, s, m.data.X);
  CHECK(at_x.mu.norm() == 0.0);
  const KernelParams k = m.kernel_at(s.theta);
  const Eigen::MatrixXd Kuu = kuu(k, m.Z);
  const Eigen::MatrixXd Kuf = kuf(k, m.Z, m.data.X);
  const Eigen::VectorXd dense = kdiag(k, m.data.X) - (Kuf.transpose() * Kuu.ldlt().solve(Kuf)).diagonal();
  CHECK((at_x.gamma.col(0) - dense).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((at_x.gamma.array() >= 0.0).all());
  CHECK((at_x.gamma.array() <= 1.5 + 1e-12).all());

  s.v = oracle::random_matrix(6, 1, rng);
  const Moments at_z = conditional_moments(m, s, m.Z);
  CHECK(at_z.gamma.cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((at_z.mu - unwhiten(m, s)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("unwhiten") {
  std::mt19937_64 rng(6);
  ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 10, 4, 1, rng);
  m.Z << 0.0, 100.0, 200.0, 300.0;  // Kuu = I to machine precision
  WhitenedState s{oracle::random_matrix(4, 1, rng), m.make_theta(KernelParams::rbf(1.0, 1.0))};
  CHECK((unwhiten(m, s) - s.v).norm() == 0.0);
  WhitenedState zero{Eigen::MatrixXd::Zero(4, 1), s.theta};
  CHECK(unwhiten(m, zero).norm() == 0.0);

  m = oracle::random_model("robustmax", KernelKind::Ard, 10, 5, 2, rng);
  s = random_state(m, rng);
  const Eigen::MatrixXd u = unwhiten(m, s);
  const Eigen::MatrixXd R = cholesky(kuu(m.kernel_at(s.theta), m.Z)).lower;
  CHECK((tri_solve(R, u) - s.v).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("closed-form assembly for a Gaussian likelihood at v = 0") {
  std::mt19937_64 rng(7);
  ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 15, 5, 2, rng);
  m.data.y.setZero();
  m.likelihood = Gaussian{1.0};
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const WhitenedState s{Eigen::MatrixXd::Zero(5, 1), theta};

  const Eigen::MatrixXd Kuu = kuu(KernelParams::rbf(1.0, 1.0), m.Z);
  const Eigen::MatrixXd Kuf = kuf(KernelParams::rbf(1.0, 1.0), m.Z, m.data.X);
  const Eigen::VectorXd gamma = (1.0 - (Kuf.transpose() * Kuu.ldlt().solve(Kuf)).diagonal().array()).matrix();
  double expected = 0.0;
  for (Eigen::Index n = 0; n < 15; ++n) expected += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * gamma(n);
  expected += standard_normal_log_density(s.v);
  for (int i = 0; i < 3; ++i) expected += 2.0 * std::log(1.5) - std::lgamma(2.0) - 1.5;  // Gamma(2, 1.5) at 1
  CHECK(log_qhat(s, m).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("du is antisymmetric for mirrored data") {
  ModelSpec m;
  m.data.X.resize(4, 1);
  m.data.X << -2, -1, 1, 2;
  m.data.y.resize(4);
  m.data.y << -1.0, -0.5, 0.5, 1.0;
  m.Z.resize(2, 1);
  m.Z << -1.5, 1.5;
  m.likelihood = Gaussian{0.2};
  const WhitenedState s{Eigen::MatrixXd::Zero(2, 1), m.make_theta(KernelParams::rbf(1.0, 1.0))};
  const TargetValue t = log_qhat(s, m);
  // dv = R^T du with u = R v, and du is antisymmetric under the mirror
  const Eigen::MatrixXd R = kuu(KernelParams::rbf(1.0, 1.0), m.Z).llt().matrixL();
  const Eigen::VectorXd du = R.transpose().triangularView<Eigen::Upper>().solve(t.dv.col(0));
  CHECK(du(0) == doctest::Approx(-du(1)).epsilon(1e-8));
  CHECK(std::abs(du(0)) > 0.0);
}

TEST_CASE("whitened target equals the unwhitened integrand up to a v-independent constant") {
  std::mt19937_64 rng(8);
  for (const char* family : kFamilies) {
    const ModelSpec m = oracle::random_model(family, KernelKind::Ard, 25, 6, 2, rng);
    const Eigen::VectorXd theta = oracle::random_theta(m, rng);
    const KernelParams k = m.kernel_at(theta);
    const Eigen::MatrixXd Kuu = kuu(k, m.Z);
    const Eigen::MatrixXd Kuf = kuf(k, m.Z, m.data.X);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(Kuu);
    const Eigen::MatrixXd proj = ldlt.solve(Kuf);
    const Eigen::VectorXd gamma = kdiag(k, m.data.X) - (Kuf.transpose() * proj).diagonal();
    const Eigen::MatrixXd R = cholesky(Kuu).lower;
    const double log_det = 2.0 * R.diagonal().array().log().sum();

    double offset = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const WhitenedState s = {oracle::random_matrix(6, m.num_latent(), rng), theta};
      const Eigen::MatrixXd u = R * s.v;
      const Eigen::MatrixXd mu = proj.transpose() * u;
      const ExpectedLogLik ell = expected_log_likelihood(m, theta, mu, gamma.replicate(1, m.num_latent()));
      double log_pu = 0.0;
      for (int p = 0; p < m.num_latent(); ++p) {
        log_pu += -0.5 * u.col(p).dot(ldlt.solve(u.col(p))) - 0.5 * log_det -
                  3.0 * std::log(2 * std::numbers::pi);
      }
      const double lhs = log_qhat(s, m).value - standard_normal_log_density(s.v);
      const double integrand = ell.value + log_pu + m.log_prior(theta);
      const double diff = lhs - (integrand - log_pu);
      if (trial == 0) offset = diff;
      CAPTURE(family);
      CHECK(std::abs(diff - offset) <= 1e-9);
    }
  }
}

TEST_CASE("maximizing log_qhat with Z = X recovers the exact GP posterior mean") {
  std::mt19937_64 rng(9);
  ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 20, 1, 1, rng);
  m.Z = m.data.X;
  const Eigen::VectorXd theta = m.make_theta(KernelParams::rbf(1.2, 0.9));
  // The target is quadratic in v: recover its Hessian from gradients and take one Newton step.
  const Eigen::Index M = m.Z.rows();
  const WhitenedState zero{Eigen::MatrixXd::Zero(M, 1), theta};
  const Eigen::VectorXd g0 = log_qhat(zero, m).dv.reshaped();
  Eigen::MatrixXd H(M, M);
  for (Eigen::Index j = 0; j < M; ++j) {
    WhitenedState e = zero;
    e.v(j, 0) = 1.0;
    H.col(j) = log_qhat(e, m).dv.reshaped() - g0;
  }
  const Eigen::VectorXd v_star = -H.ldlt().solve(g0);
  const Moments mom = conditional_moments(m, {v_star, theta}, m.data.X);
  const double noise = std::get<Gaussian>(m.likelihood_at(theta)).noise_variance;
  const oracle::DenseGp gp = oracle::dense_gp(kuu(m.kernel_at(theta), m.data.X), m.data.y, noise);
  CHECK((mom.mu.col(0) - gp.mean).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("pack and unpack round trip; target maps failures to -inf") {
  std::mt19937_64 rng(10);
  const ModelSpec m = oracle::random_model("robustmax", KernelKind::Rbf, 12, 4, 2, rng);
  const WhitenedState s = random_state(m, rng);
  const WhitenedState back = unpack(pack(s), 4, 3);
  CHECK(back.v == s.v);
  CHECK(back.theta == s.theta);

  const LogDensity target = make_target(m);
  Eigen::VectorXd grad;
  const Eigen::VectorXd x = pack(s);
  CHECK(target(x, grad) == doctest::Approx(log_qhat(s, m).value));
  Eigen::VectorXd bad = x;
  bad(bad.size() - 2) = 800.0;  // lengthscale overflows
  CHECK(target(bad, grad) == -std::numeric_limits<double>::infinity());
}
