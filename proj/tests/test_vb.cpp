#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>

#include "oracles.hpp"
#include "vsgp/io.hpp"
#include "vsgp/kmeans.hpp"
#include "vsgp/vb.hpp"

using namespace vsgp;

namespace {

const char* kFamilies[] = {"gaussian", "poisson", "probit", "robustmax"};

GaussianApprox random_approx(const ModelSpec& m, std::mt19937_64& rng) {
  GaussianApprox a;
  a.m = oracle::random_matrix(m.num_inducing(), m.num_latent(), rng, 0.5);
  for (int p = 0; p < m.num_latent(); ++p) {
    Eigen::MatrixXd L = oracle::random_matrix(m.num_inducing(), m.num_inducing(), rng, 0.2);
    L = L.triangularView<Eigen::Lower>();
    L.diagonal() = L.diagonal().cwiseAbs().array() + 0.3;
    a.L.push_back(L);
  }
  a.theta = oracle::random_theta(m, rng);
  a.Z = m.Z;
  return a;
}

Eigen::VectorXd flatten_lower(const std::vector<Eigen::MatrixXd>& Ls) {
  std::vector<double> out;
  for (const auto& L : Ls) {
    for (Eigen::Index j = 0; j < L.cols(); ++j) {
      for (Eigen::Index i = j; i < L.rows(); ++i) out.push_back(L(i, j));
    }
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

std::vector<Eigen::MatrixXd> unflatten_lower(const Eigen::VectorXd& x, Eigen::Index M, int P) {
  std::vector<Eigen::MatrixXd> Ls;
  Eigen::Index k = 0;
  for (int p = 0; p < P; ++p) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(M, M);
    for (Eigen::Index j = 0; j < M; ++j) {
      for (Eigen::Index i = j; i < M; ++i) L(i, j) = x(k++);
    }
    Ls.push_back(L);
  }
  return Ls;
}

double gauss_logpdf(const Eigen::VectorXd& y, const Eigen::MatrixXd& C) {
  const Eigen::LLT<Eigen::MatrixXd> llt(C);
  const Eigen::VectorXd a = llt.matrixL().solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * a.squaredNorm() - 0.5 * logdet - 0.5 * std::log(2 * std::numbers::pi) * y.size();
}

/// Collapsed sparse-regression bound from dense matrices.
double collapsed_bound(const ModelSpec& m, const Eigen::VectorXd& theta) {
  const KernelParams k = m.kernel_at(theta);
  const double noise = std::exp(theta(theta.size() - 1));
  const Eigen::MatrixXd Kuu = kuu(k, m.Z);
  const Eigen::MatrixXd Kuf = kuf(k, m.Z, m.data.X);
  const Eigen::MatrixXd Qff = Kuf.transpose() * Kuu.llt().solve(Kuf);
  Eigen::MatrixXd C = Qff;
  C.diagonal().array() += noise;
  const double trace = (kdiag(k, m.data.X) - Qff.diagonal()).sum();
  return gauss_logpdf(m.data.y, C) - 0.5 * trace / noise;
}

VbConfig quick_config(int phase_a = 50, int max_iterations = 500) {
  VbConfig c;
  c.phase_a_iterations = phase_a;
  c.max_iterations = max_iterations;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("ELBO gradients match finite differences for every family and kernel") {
  std::mt19937_64 rng(404);
  for (const char* family : kFamilies) {
    for (KernelKind kind : {KernelKind::Rbf, KernelKind::Ard}) {
      for (int trial = 0; trial < 10; ++trial) {
        const ModelSpec m = oracle::random_model(family, kind, 25, 6, 2, rng);
        const GaussianApprox a = random_approx(m, rng);
        const ElboValue e = elbo(a, m);
        CAPTURE(family);
        CAPTURE(trial);

        auto by_m = [&](const Eigen::VectorXd& x) {
          GaussianApprox b = a;
          b.m = x.reshaped(a.m.rows(), a.m.cols());
          return elbo(b, m).value;
        };
        CHECK(oracle::rel_error(e.dm.reshaped(), oracle::fd_gradient(by_m, a.m.reshaped())) <= 1e-5);

        auto by_L = [&](const Eigen::VectorXd& x) {
          GaussianApprox b = a;
          b.L = unflatten_lower(x, a.num_inducing(), a.num_latent());
          return elbo(b, m).value;
        };
        CHECK(oracle::rel_error(flatten_lower(e.dL), oracle::fd_gradient(by_L, flatten_lower(a.L))) <= 1e-5);

        auto by_theta = [&](const Eigen::VectorXd& x) {
          GaussianApprox b = a;
          b.theta = x;
          return elbo(b, m).value;
        };
        CHECK(oracle::rel_error(e.dtheta, oracle::fd_gradient(by_theta, a.theta)) <= 1e-5);

        auto by_z = [&](const Eigen::VectorXd& x) {
          GaussianApprox b = a;
          b.Z = x.reshaped(a.Z.rows(), a.Z.cols());
          return elbo(b, m).value;
        };
        CHECK(oracle::rel_error(e.dZ.reshaped(), oracle::fd_gradient(by_z, a.Z.reshaped())) <= 1e-5);
      }
    }
  }
}

TEST_CASE("KL vanishes at the prior and is positive elsewhere") {
  std::mt19937_64 rng(2);
  const ModelSpec m = oracle::random_model("robustmax", KernelKind::Rbf, 20, 5, 2, rng);
  const Eigen::VectorXd theta = oracle::random_theta(m, rng);
  const ElboValue e = elbo(prior_approx(m, theta), m);
  CHECK(std::abs(e.kl) <= 1e-12);
  CHECK(elbo(random_approx(m, rng), m).kl > 0.0);
  CHECK(e.value == doctest::Approx(e.expected_log_lik - e.kl + e.log_prior));
}

TEST_CASE("optimal Gaussian approximation attains the collapsed bound") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelSpec m = oracle::random_model("gaussian", KernelKind::Ard, 30, 8, 2, rng);
    const Eigen::VectorXd theta = oracle::random_theta(m, rng);
    const GaussianApprox opt = optimal_gaussian_approx(m, theta, m.Z);
    const ElboValue e = elbo(opt, m);
    CHECK(e.value - e.log_prior == doctest::Approx(collapsed_bound(m, theta)).epsilon(1e-10));
    CHECK(e.dm.cwiseAbs().maxCoeff() <= 1e-6);

    const BoundReport r = elbo_bound_check(opt, m);
    CHECK(r.gap >= -1e-10);
    CHECK(r.log_marginal >= r.elbo - 1e-10);

    GaussianApprox worse = opt;
    worse.m.array() += 0.1;
    CHECK(elbo(worse, m).value < e.value);
  }
}

TEST_CASE("dense log marginal likelihood against an independent formula") {
  std::mt19937_64 rng(10);
  const ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 15, 4, 1, rng);
  const Eigen::VectorXd theta = oracle::random_theta(m, rng);
  Eigen::MatrixXd C = kuu(m.kernel_at(theta), m.data.X);
  C.diagonal().array() += std::exp(theta(2));
  CHECK(dense_log_marginal_likelihood(m, theta) == doctest::Approx(gauss_logpdf(m.data.y, C)).epsilon(1e-10));
}

TEST_CASE("Z = X recovers exact GP regression") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::normal_distribution<double> noise(0.0, 0.3);
    ModelSpec m;
    m.data.X.resize(16, 1);
    m.data.y.resize(16);
    for (Eigen::Index i = 0; i < 16; ++i) {
      m.data.X(i, 0) = u(rng);
      m.data.y(i) = std::sin(2.0 * m.data.X(i, 0)) + noise(rng);
    }
    m.likelihood = Gaussian{0.1};
    m.Z = m.data.X;
    VbConfig c = quick_config(200, 3000);
    c.optimize_z = false;
    const VbFit f = fit(m, m.make_theta(KernelParams::rbf(1.0, 0.8)), c);
    const BoundReport r = elbo_bound_check(f.approx, m);
    CHECK(r.gap >= -1e-8);
    CHECK(r.gap <= 1e-6);

    const KernelParams k = m.kernel_at(f.approx.theta);
    const double noise_var = std::exp(f.approx.theta(2));
    const oracle::DenseGp g = oracle::dense_gp(kuu(k, m.data.X), m.data.y, noise_var);
    const Eigen::MatrixXd u_mean = unwhiten(m, {f.approx.m, f.approx.theta});
    CHECK((u_mean.col(0) - g.mean).cwiseAbs().maxCoeff() <= 1e-3);
  }
}

TEST_CASE("fit: monotone trace, phase B improves on phase A, permutation invariance") {
  std::mt19937_64 rng(12);
  for (const char* family : {"gaussian", "probit"}) {
    CAPTURE(family);
    ModelSpec m = oracle::random_model(family, KernelKind::Rbf, 40, 6, 1, rng);
    const Eigen::VectorXd theta0 = m.make_theta(KernelParams::rbf(1.0, 1.0));
    const VbFit f = fit(m, theta0, quick_config(50, 3000));
    REQUIRE(f.trace.size() >= 2);
    for (std::size_t i = 1; i < f.trace.size(); ++i) CHECK(f.trace[i] >= f.trace[i - 1] - 1e-9);
    CHECK(f.elbo >= f.phase_a_elbo - 1e-9);
    CHECK(f.elbo == doctest::Approx(elbo(f.approx, m).value).epsilon(1e-12));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(m.data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(order.size() - 1 - i);
    ModelSpec shuffled = m;
    shuffled.data = m.data.subset(order);
    const VbFit g = fit(shuffled, theta0, quick_config(50, 3000));
    CHECK(std::abs(f.elbo - g.elbo) <= 1e-6 * std::max(1.0, std::abs(f.elbo)));
  }
}

TEST_CASE("fit is deterministic and the Adam path improves the ELBO") {
  std::mt19937_64 rng(13);
  const ModelSpec m = oracle::random_model("poisson", KernelKind::Rbf, 30, 5, 1, rng);
  const Eigen::VectorXd theta0 = m.make_theta(KernelParams::rbf(1.0, 1.0));
  const VbFit a = fit(m, theta0, quick_config(20, 200));
  const VbFit b = fit(m, theta0, quick_config(20, 200));
  CHECK(a.elbo == b.elbo);
  CHECK(a.approx.m == b.approx.m);

  VbConfig c = quick_config(20, 300);
  c.optimizer = OptimizerKind::Adam;
  c.adam_learning_rate = 0.02;
  const VbFit adam = fit(m, theta0, c);
  CHECK(adam.elbo > adam.trace.front());
}

TEST_CASE("adding inducing points does not lower the optimal collapsed bound") {
  std::mt19937_64 rng(14);
  ModelSpec m = oracle::random_model("gaussian", KernelKind::Rbf, 30, 4, 1, rng);
  const Eigen::VectorXd theta = m.make_theta(KernelParams::rbf(1.0, 0.7));
  double previous = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd Z(0, 1);
  for (int i = 0; i < 8; ++i) {
    Z.conservativeResize(i + 1, 1);
    Z(i, 0) = -2.0 + 0.5 * i + 0.1;
    const ElboValue e = elbo(optimal_gaussian_approx(m, theta, Z), m);
    CHECK(e.value >= previous - 1e-9);
    previous = e.value;
  }
}

TEST_CASE("kmeans initialization") {
  std::mt19937_64 rng(15);
  const Eigen::MatrixXd X = oracle::random_matrix(12, 2, rng);

  Eigen::MatrixXd all = kmeans_init(X, 12, 3);
  std::vector<std::pair<double, double>> a, b;
  for (Eigen::Index i = 0; i < 12; ++i) {
    a.emplace_back(X(i, 0), X(i, 1));
    b.emplace_back(all(i, 0), all(i, 1));
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  const Eigen::MatrixXd one = kmeans_init(X, 1, 3);
  CHECK((one.row(0) - X.colwise().mean()).norm() <= 1e-12);

  Eigen::MatrixXd blobs(40, 2);
  for (Eigen::Index i = 0; i < 40; ++i) {
    const double c = i < 20 ? -5.0 : 5.0;
    blobs(i, 0) = c + 0.1 * std::sin(static_cast<double>(i));
    blobs(i, 1) = 0.1 * std::cos(static_cast<double>(i));
  }
  Eigen::MatrixXd two = kmeans_init(blobs, 2, 7);
  if (two(0, 0) > two(1, 0)) two.row(0).swap(two.row(1));
  CHECK((two.row(0) - blobs.topRows(20).colwise().mean()).norm() <= 1e-12);
  CHECK((two.row(1) - blobs.bottomRows(20).colwise().mean()).norm() <= 1e-12);

  CHECK(kmeans_init(X, 4, 99) == kmeans_init(X, 4, 99));
  CHECK_THROWS_AS(kmeans_init(X, 13, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_init(X, 0, 1), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is exact") {
  std::mt19937_64 rng(16);
  const ModelSpec m = oracle::random_model("robustmax", KernelKind::Ard, 10, 4, 3, rng);
  const GaussianApprox a = random_approx(m, rng);
  const auto path = std::filesystem::temp_directory_path() / "vsgp_test_checkpoint.txt";
  write_checkpoint(path, a);
  const GaussianApprox b = read_checkpoint(path);
  CHECK(a.m == b.m);
  CHECK(a.theta == b.theta);
  CHECK(a.Z == b.Z);
  REQUIRE(b.L.size() == a.L.size());
  for (std::size_t p = 0; p < a.L.size(); ++p) CHECK(a.L[p] == b.L[p]);
  std::filesystem::remove(path);

  const auto bad = std::filesystem::temp_directory_path() / "vsgp_test_bad_checkpoint.txt";
  write_atomically(bad, "vsgp-checkpoint 1\ndims 2 1 1 2\ntheta 0.1\n");
  CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
  std::filesystem::remove(bad);
}
