#include "vsgp/kmeans.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsgp {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRelativeTolerance = 1e-6;

Eigen::VectorXd nearest_distances(const Eigen::MatrixXd& X, const Eigen::MatrixXd& centers,
                                  Eigen::Index count, std::vector<Eigen::Index>* assign) {
  Eigen::VectorXd best = Eigen::VectorXd::Constant(X.rows(), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < count; ++c) {
      const double d = (X.row(i) - centers.row(c)).squaredNorm();
      if (d < best(i)) {
        best(i) = d;
        if (assign) (*assign)[static_cast<std::size_t>(i)] = c;
      }
    }
  }
  return best;
}

}  // namespace

Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& X, Eigen::Index M, std::uint64_t seed) {
  const Eigen::Index N = X.rows();
  if (M < 1) throw std::invalid_argument("kmeans_init: need at least one centre");
  if (M > N) {
    throw std::invalid_argument("kmeans_init: " + std::to_string(M) + " centres requested from " +
                                std::to_string(N) + " points");
  }
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(M, X.cols());

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, N - 1);
  centers.row(0) = X.row(first(rng));
  for (Eigen::Index c = 1; c < M; ++c) {
    const Eigen::VectorXd d2 = nearest_distances(X, centers, c, nullptr);
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = N - 1;
      for (Eigen::Index i = 0; i < N; ++i) {
        target -= d2(i);
        if (target < 0.0 && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2(pick) == 0.0 && pick > 0) --pick;
    } else {
      pick = first(rng);
    }
    centers.row(c) = X.row(pick);
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(N), 0);
  double inertia = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const Eigen::VectorXd d2 = nearest_distances(X, centers, M, &assign);
    const double next = d2.sum();

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, X.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(M);
    for (Eigen::Index i = 0; i < N; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
      counts(assign[static_cast<std::size_t>(i)]) += 1.0;
    }
    Eigen::VectorXd spare = d2;
    for (Eigen::Index c = 0; c < M; ++c) {
      if (counts(c) > 0.0) {
        centers.row(c) = sums.row(c) / counts(c);
      } else {
        // Empty cluster: move it to the worst-served point.
        Eigen::Index far = 0;
        spare.maxCoeff(&far);
        centers.row(c) = X.row(far);
        spare(far) = 0.0;
      }
    }
    const bool converged = std::isfinite(inertia) &&
                           std::abs(inertia - next) <= kRelativeTolerance * std::max(inertia, 1e-300);
    inertia = next;
    if (converged || next == 0.0) break;
  }
  return centers;
}

}  // namespace vsgp
