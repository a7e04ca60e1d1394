#include "vsgp/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vsgp/linalg.hpp"

namespace vsgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
const double kInvSqrtPi = 1.0 / std::sqrt(std::numbers::pi);

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

double log_normal_pdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

// Asymptotic series Phi(x) * (-x) / phi(x) for x << 0.
double tail_series(double x) {
  const double inv = 1.0 / (x * x);
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -(2.0 * k - 1.0) * inv;
    sum += term;
  }
  return sum;
}

double exposure(const Poisson& p, Eigen::Index n) {
  return p.bin_measure.size() == 1 ? p.bin_measure(0) : p.bin_measure(n);
}

void check_gamma(const Eigen::VectorXd& gamma) {
  for (Eigen::Index i = 0; i < gamma.size(); ++i) {
    if (!(gamma(i) > 0.0)) {
      throw std::invalid_argument("variance entries must be positive (index " + std::to_string(i) +
                                  ")");
    }
  }
}

struct PointTerms {
  double g;
  double dg;
  double dparam;
};

// E[g(f)] over N(mu, gamma) by quadrature, differentiated through the nodes
// f_i = mu + sqrt(2 gamma) t_i.
template <class F>
void integrate(const QuadratureRule& rule, double mu, double gamma, F&& g, double& value,
               double& dmu, double& dgamma, double* dparam) {
  const double s = std::sqrt(2.0 * gamma);
  value = dmu = dgamma = 0.0;
  double dp = 0.0;
  for (int i = 0; i < rule.order; ++i) {
    const double t = rule.nodes(i);
    const double w = rule.weights(i) * kInvSqrtPi;
    const PointTerms r = g(mu + s * t);
    value += w * r.g;
    dmu += w * r.dg;
    dgamma += w * r.dg * t / s;
    dp += w * r.dparam;
  }
  if (dparam) *dparam = dp;
}

}  // namespace

double log_normal_cdf(double x) {
  if (x > 5.0) {
    return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  }
  if (x > -37.0) {
    return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  }
  return log_normal_pdf(x) - std::log(-x) + std::log(tail_series(x));
}

double inverse_mills_ratio(double x) {
  if (x > -37.0) {
    return std::exp(log_normal_pdf(x) - log_normal_cdf(x));
  }
  return -x / tail_series(x);
}

int latent_count(const LikelihoodSpec& spec) {
  if (const auto* rm = std::get_if<RobustMax>(&spec)) return rm->num_classes;
  return 1;
}

void validate_responses(const LikelihoodSpec& spec, const Eigen::VectorXd& y) {
  std::visit(overloaded{
                 [&](const Gaussian& g) {
                   if (!(g.noise_variance > 0.0)) {
                     throw std::invalid_argument("Gaussian noise variance must be positive");
                   }
                 },
                 [&](const Poisson& p) {
                   if (p.bin_measure.size() != 1 && p.bin_measure.size() != y.size()) {
                     throw DimensionMismatch("Poisson bin measures must be scalar or one per datum");
                   }
                   if (!(p.bin_measure.array() > 0.0).all()) {
                     throw std::invalid_argument("Poisson bin measures must be positive");
                   }
                   for (Eigen::Index i = 0; i < y.size(); ++i) {
                     if (y(i) < 0.0 || y(i) != std::floor(y(i))) {
                       throw std::invalid_argument("Poisson responses must be nonnegative counts");
                     }
                   }
                 },
                 [&](const BernoulliProbit&) {
                   for (Eigen::Index i = 0; i < y.size(); ++i) {
                     if (y(i) != 0.0 && y(i) != 1.0) {
                       throw std::invalid_argument("probit responses must be 0 or 1");
                     }
                   }
                 },
                 [&](const RobustMax& r) {
                   if (r.num_classes < 2) throw std::invalid_argument("robust-max needs K >= 2");
                   if (!(r.epsilon > 0.0 && r.epsilon < 1.0)) {
                     throw std::invalid_argument("robust-max epsilon must lie in (0, 1)");
                   }
                   for (Eigen::Index i = 0; i < y.size(); ++i) {
                     if (y(i) < 0.0 || y(i) >= r.num_classes || y(i) != std::floor(y(i))) {
                       throw std::invalid_argument("class label out of range at index " +
                                                   std::to_string(i));
                     }
                   }
                 },
             },
             spec);
}

QuadratureRule gauss_hermite(int order) {
  if (order < 1) throw std::invalid_argument("quadrature order must be >= 1");
  if (order > kMaxQuadratureOrder) {
    throw std::invalid_argument("quadrature order above " + std::to_string(kMaxQuadratureOrder));
  }
  const int n = order;

  // Golub-Welsch for starting points, then Newton on the orthonormal
  // Hermite recurrence to polish nodes and get weights.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J, Eigen::EigenvaluesOnly);
  Eigen::VectorXd x = eig.eigenvalues();

  const double p0 = std::pow(std::numbers::pi, -0.25);
  QuadratureRule rule;
  rule.order = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = x(i);
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = p0;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double step = p1 / pp;
      z -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    // Recompute the derivative at the converged node.
    double p1 = p0;
    double p2 = 0.0;
    for (int j = 1; j <= n; ++j) {
      const double p3 = p2;
      p2 = p1;
      p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
    }
    pp = std::sqrt(2.0 * n) * p2;
    rule.nodes(i) = z;
    rule.weights(i) = 2.0 / (pp * pp);
  }

  // Enforce exact symmetry about zero.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double node = 0.5 * (rule.nodes(j) - rule.nodes(i));
    const double weight = 0.5 * (rule.weights(i) + rule.weights(j));
    rule.nodes(i) = -node;
    rule.nodes(j) = node;
    rule.weights(i) = rule.weights(j) = weight;
  }
  if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
  return rule;
}

const QuadratureRule& default_quadrature() {
  static const QuadratureRule rule = gauss_hermite(kDefaultQuadratureOrder);
  return rule;
}

Expectations variational_expectations(const LikelihoodSpec& spec, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& mu, const Eigen::VectorXd& gamma,
                                      const QuadratureRule& rule, bool force_quadrature) {
  const Eigen::Index N = y.size();
  if (mu.size() != N || gamma.size() != N) {
    throw DimensionMismatch("variational_expectations: y, mu and gamma lengths differ");
  }
  if (std::holds_alternative<RobustMax>(spec)) {
    throw std::invalid_argument("robust-max expectations need per-class moments");
  }
  validate_responses(spec, y);
  check_gamma(gamma);

  Expectations out;
  out.value.resize(N);
  out.dmu.resize(N);
  out.dgamma.resize(N);

  std::visit(
      overloaded{
          [&](const Gaussian& lik) {
            const double s2 = lik.noise_variance;
            out.dlog_noise.resize(N);
            for (Eigen::Index n = 0; n < N; ++n) {
              if (force_quadrature) {
                double dp = 0.0;
                integrate(
                    rule, mu(n), gamma(n),
                    [&](double f) {
                      const double r = y(n) - f;
                      return PointTerms{-0.5 * (kLog2Pi + std::log(s2)) - r * r / (2.0 * s2),
                                        r / s2, -0.5 + r * r / (2.0 * s2)};
                    },
                    out.value(n), out.dmu(n), out.dgamma(n), &dp);
                out.dlog_noise(n) = dp;
              } else {
                const double r = y(n) - mu(n);
                const double sq = r * r + gamma(n);
                out.value(n) = -0.5 * (kLog2Pi + std::log(s2)) - sq / (2.0 * s2);
                out.dmu(n) = r / s2;
                out.dgamma(n) = -0.5 / s2;
                out.dlog_noise(n) = -0.5 + sq / (2.0 * s2);
              }
            }
          },
          [&](const Poisson& lik) {
            for (Eigen::Index n = 0; n < N; ++n) {
              const double a = exposure(lik, n);
              const double log_a = std::log(a);
              const double lfact = std::lgamma(y(n) + 1.0);
              if (force_quadrature) {
                integrate(
                    rule, mu(n), gamma(n),
                    [&](double f) {
                      const double rate = a * std::exp(f);
                      return PointTerms{y(n) * (f + log_a) - rate - lfact, y(n) - rate, 0.0};
                    },
                    out.value(n), out.dmu(n), out.dgamma(n), nullptr);
              } else {
                const double mean_rate = a * std::exp(mu(n) + 0.5 * gamma(n));
                out.value(n) = y(n) * (mu(n) + log_a) - mean_rate - lfact;
                out.dmu(n) = y(n) - mean_rate;
                out.dgamma(n) = -0.5 * mean_rate;
              }
            }
          },
          [&](const BernoulliProbit&) {
            for (Eigen::Index n = 0; n < N; ++n) {
              const double sign = y(n) > 0.5 ? 1.0 : -1.0;
              integrate(
                  rule, mu(n), gamma(n),
                  [&](double f) {
                    const double z = sign * f;
                    return PointTerms{log_normal_cdf(z), sign * inverse_mills_ratio(z), 0.0};
                  },
                  out.value(n), out.dmu(n), out.dgamma(n), nullptr);
            }
          },
          [&](const RobustMax&) {},
      },
      spec);
  return out;
}

MultiExpectations argmax_probability(const Eigen::VectorXd& labels, const Eigen::MatrixXd& mu,
                                     const Eigen::MatrixXd& gamma, const QuadratureRule& rule) {
  const Eigen::Index N = labels.size();
  const Eigen::Index K = mu.cols();
  if (mu.rows() != N || gamma.rows() != N || gamma.cols() != K) {
    throw DimensionMismatch("argmax_probability: mu and gamma must be N x K");
  }
  if (K < 2) throw DimensionMismatch("argmax_probability: need at least two latent functions");
  if (!(gamma.array() > 0.0).all()) {
    throw std::invalid_argument("variance entries must be positive");
  }

  MultiExpectations out;
  out.value = Eigen::VectorXd::Zero(N);
  out.dmu = Eigen::MatrixXd::Zero(N, K);
  out.dgamma = Eigen::MatrixXd::Zero(N, K);

  std::vector<double> cdf(K), pdf(K), prefix(K + 1), suffix(K + 1);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double lab = labels(n);
    if (lab < 0.0 || lab >= static_cast<double>(K) || lab != std::floor(lab)) {
      throw std::invalid_argument("class label out of range at index " + std::to_string(n));
    }
    const auto y = static_cast<Eigen::Index>(lab);
    const double sy = std::sqrt(2.0 * gamma(n, y));
    for (int i = 0; i < rule.order; ++i) {
      const double s = rule.nodes(i);
      const double w = rule.weights(i) * kInvSqrtPi;
      const double t = mu(n, y) + sy * s;
      for (Eigen::Index k = 0; k < K; ++k) {
        if (k == y) {
          cdf[k] = 1.0;
          pdf[k] = 0.0;
          continue;
        }
        const double z = (t - mu(n, k)) / std::sqrt(gamma(n, k));
        cdf[k] = 0.5 * std::erfc(-z / std::numbers::sqrt2);
        pdf[k] = std::exp(log_normal_pdf(z));
      }
      prefix[0] = 1.0;
      for (Eigen::Index k = 0; k < K; ++k) prefix[k + 1] = prefix[k] * cdf[k];
      suffix[K] = 1.0;
      for (Eigen::Index k = K; k > 0; --k) suffix[k - 1] = suffix[k] * cdf[k - 1];
      out.value(n) += w * prefix[K];

      for (Eigen::Index k = 0; k < K; ++k) {
        if (k == y) continue;
        const double sk = std::sqrt(gamma(n, k));
        const double z = (t - mu(n, k)) / sk;
        // d prod / d z_k
        const double dz = pdf[k] * prefix[k] * suffix[k + 1];
        out.dmu(n, k) -= w * dz / sk;
        out.dgamma(n, k) -= w * dz * 0.5 * z / gamma(n, k);
        out.dmu(n, y) += w * dz / sk;
        out.dgamma(n, y) += w * dz * s / (sy * sk);
      }
    }
  }
  return out;
}

MultiExpectations robustmax_expectations(const RobustMax& spec, const Eigen::VectorXd& labels,
                                         const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma,
                                         const QuadratureRule& rule) {
  if (mu.cols() != spec.num_classes) {
    throw DimensionMismatch("robust-max: mu must have one column per class");
  }
  validate_responses(spec, labels);
  MultiExpectations p = argmax_probability(labels, mu, gamma, rule);
  const double hit = std::log1p(-spec.epsilon);
  const double miss = std::log(spec.epsilon / (spec.num_classes - 1));
  const double slope = hit - miss;
  p.value = (p.value.array() * hit + (1.0 - p.value.array()) * miss).matrix();
  p.dmu *= slope;
  p.dgamma *= slope;
  return p;
}

Eigen::MatrixXd robustmax_class_probabilities(const RobustMax& spec, const Eigen::MatrixXd& mu,
                                              const Eigen::MatrixXd& gamma,
                                              const QuadratureRule& rule) {
  const Eigen::Index N = mu.rows();
  const Eigen::Index K = spec.num_classes;
  if (mu.cols() != K || gamma.cols() != K || gamma.rows() != N) {
    throw DimensionMismatch("robust-max: mu and gamma must be N x K");
  }
  Eigen::MatrixXd probs(N, K);
  for (Eigen::Index c = 0; c < K; ++c) {
    const Eigen::VectorXd labels = Eigen::VectorXd::Constant(N, static_cast<double>(c));
    probs.col(c) = argmax_probability(labels, mu, gamma, rule).value;
  }
  const double miss = spec.epsilon / (K - 1);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double total = probs.row(n).sum();
    for (Eigen::Index c = 0; c < K; ++c) {
      const double q = probs(n, c) / total;
      probs(n, c) = q * (1.0 - spec.epsilon) + (1.0 - q) * miss;
    }
  }
  return probs;
}

Eigen::VectorXd predictive_density(const LikelihoodSpec& spec, const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& mu, const Eigen::MatrixXd& gamma,
                                   const QuadratureRule& rule) {
  const Eigen::Index N = y.size();
  if (mu.rows() != N || gamma.rows() != N || mu.cols() != latent_count(spec) ||
      gamma.cols() != mu.cols()) {
    throw DimensionMismatch("predictive_density: moments must be N x latent_count");
  }
  validate_responses(spec, y);
  Eigen::VectorXd out(N);
  std::visit(overloaded{
                 [&](const Gaussian& lik) {
                   for (Eigen::Index n = 0; n < N; ++n) {
                     const double v = lik.noise_variance + gamma(n, 0);
                     const double r = y(n) - mu(n, 0);
                     out(n) = -0.5 * (kLog2Pi + std::log(v)) - r * r / (2.0 * v);
                   }
                 },
                 [&](const Poisson& lik) {
                   std::vector<double> terms(rule.order);
                   for (Eigen::Index n = 0; n < N; ++n) {
                     const double a = exposure(lik, n);
                     const double lfact = std::lgamma(y(n) + 1.0);
                     const double s = std::sqrt(2.0 * std::max(gamma(n, 0), 0.0));
                     double peak = -std::numeric_limits<double>::infinity();
                     for (int i = 0; i < rule.order; ++i) {
                       const double f = mu(n, 0) + s * rule.nodes(i);
                       terms[i] = std::log(rule.weights(i) * kInvSqrtPi) + y(n) * (f + std::log(a)) -
                                  a * std::exp(f) - lfact;
                       peak = std::max(peak, terms[i]);
                     }
                     double acc = 0.0;
                     for (double t : terms) acc += std::exp(t - peak);
                     out(n) = peak + std::log(acc);
                   }
                 },
                 [&](const BernoulliProbit&) {
                   for (Eigen::Index n = 0; n < N; ++n) {
                     const double sign = y(n) > 0.5 ? 1.0 : -1.0;
                     out(n) = log_normal_cdf(sign * mu(n, 0) / std::sqrt(1.0 + gamma(n, 0)));
                   }
                 },
                 [&](const RobustMax& lik) {
                   const Eigen::MatrixXd probs = robustmax_class_probabilities(lik, mu, gamma, rule);
                   for (Eigen::Index n = 0; n < N; ++n) {
                     out(n) = std::log(probs(n, static_cast<Eigen::Index>(y(n))));
                   }
                 },
             },
             spec);
  return out;
}

}  // namespace vsgp
