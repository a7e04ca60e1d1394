#include "vsgp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

namespace vsgp {

namespace {

// Autocovariance at lags 0..S-1 (biased, divided by S) via zero-padded FFT.
std::vector<double> autocovariance(const Eigen::VectorXd& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::size_t padded = 1;
  while (padded < 2 * n) padded <<= 1;
  const double mean = x.mean();
  std::vector<double> centered(padded, 0.0);
  for (std::size_t i = 0; i < n; ++i) centered[i] = x(static_cast<Eigen::Index>(i)) - mean;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, centered);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> acov;
  fft.inv(acov, freq);
  acov.resize(n);
  for (auto& a : acov) a /= static_cast<double>(n);
  return acov;
}

double geyer_ess(const Eigen::VectorXd& x) {
  const auto s = static_cast<std::size_t>(x.size());
  const std::vector<double> acov = autocovariance(x);
  const double var = acov[0];
  // Sum consecutive pairs Gamma_k = rho_{2k} + rho_{2k+1} while positive,
  // enforcing monotone decrease.
  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < s; k += 2) {
    double pair = (acov[k] + acov[k + 1]) / var;
    if (pair <= 0.0) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  const double sd = static_cast<double>(s);
  if (!(tau > 0.0)) return sd;
  return std::clamp(sd / tau, std::numeric_limits<double>::min(), sd);
}

bool is_constant(const Eigen::VectorXd& x) {
  return (x.array() == x(0)).all();
}

}  // namespace

double EssResult::min() const { return ess.size() == 0 ? 0.0 : ess.minCoeff(); }

EssResult ess(const Eigen::MatrixXd& draws) {
  if (draws.rows() < 10) throw std::invalid_argument("ESS needs at least 10 draws");
  if (!draws.allFinite()) throw std::invalid_argument("ESS needs finite draws");
  EssResult out;
  out.ess.resize(draws.cols());
  out.constant.assign(static_cast<std::size_t>(draws.cols()), false);
  for (Eigen::Index q = 0; q < draws.cols(); ++q) {
    const Eigen::VectorXd col = draws.col(q);
    if (is_constant(col)) {
      out.ess(q) = static_cast<double>(draws.rows());
      out.constant[static_cast<std::size_t>(q)] = true;
    } else {
      out.ess(q) = geyer_ess(col);
    }
  }
  return out;
}

TnEss tn_ess(const EssResult& e, double wall_clock_seconds) {
  if (!(wall_clock_seconds > 0.0)) throw std::invalid_argument("wall clock must be positive");
  TnEss out;
  out.per_second = e.ess / wall_clock_seconds;
  out.min_per_second = e.min() / wall_clock_seconds;
  return out;
}

PsrfResult psrf(const std::vector<Eigen::MatrixXd>& chains, bool split) {
  if (chains.size() < 2) throw std::invalid_argument("PSRF needs at least two chains");
  const Eigen::Index s = chains.front().rows();
  const Eigen::Index q = chains.front().cols();
  for (const auto& c : chains) {
    if (c.rows() != s || c.cols() != q) throw std::invalid_argument("PSRF chains differ in shape");
  }
  std::vector<Eigen::MatrixXd> parts;
  if (split) {
    const Eigen::Index half = s / 2;
    for (const auto& c : chains) {
      parts.push_back(c.topRows(half));
      parts.push_back(c.middleRows(s - half, half));
    }
  } else {
    parts = chains;
  }
  const Eigen::Index n = parts.front().rows();
  if (n < 2) throw std::invalid_argument("PSRF needs at least two draws per chain");
  const auto m = static_cast<double>(parts.size());
  const auto nd = static_cast<double>(n);

  PsrfResult out;
  out.psrf.resize(q);
  out.degenerate.assign(static_cast<std::size_t>(q), false);
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::VectorXd means(parts.size());
    double w = 0.0;
    for (std::size_t c = 0; c < parts.size(); ++c) {
      const Eigen::VectorXd col = parts[c].col(j);
      means(static_cast<Eigen::Index>(c)) = col.mean();
      w += (col.array() - col.mean()).square().sum() / (nd - 1.0);
    }
    w /= m;
    const double b = nd * (means.array() - means.mean()).square().sum() / (m - 1.0);
    if (!(w > 0.0)) {
      out.degenerate[static_cast<std::size_t>(j)] = true;
      out.psrf(j) = b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
      continue;
    }
    const double v_hat = (nd - 1.0) / nd * w + b / nd;
    out.psrf(j) = std::sqrt(v_hat / w);
  }
  return out;
}

Eigen::MatrixXd psrf_evolution(const std::vector<Eigen::MatrixXd>& chains, int points, bool split) {
  if (chains.empty()) throw std::invalid_argument("PSRF needs at least two chains");
  if (points < 1) throw std::invalid_argument("PSRF evolution needs at least one point");
  const Eigen::Index s = chains.front().rows();
  const Eigen::Index q = chains.front().cols();
  const Eigen::Index first = split ? 4 : 2;
  std::vector<Eigen::Index> lengths;
  for (int i = 1; i <= points; ++i) {
    const auto len = std::max<Eigen::Index>(first, s * i / points);
    if (len <= s && (lengths.empty() || lengths.back() != len)) lengths.push_back(len);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(lengths.size()), q + 1);
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    std::vector<Eigen::MatrixXd> prefix;
    for (const auto& c : chains) prefix.push_back(c.topRows(lengths[r]));
    const auto row = static_cast<Eigen::Index>(r);
    out(row, 0) = static_cast<double>(lengths[r]);
    out.row(row).tail(q) = psrf(prefix, split).psrf.transpose();
  }
  return out;
}

std::vector<Eigen::Index> least_efficient(const EssResult& e, std::size_t count) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(e.ess.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return e.ess(a) < e.ess(b); });
  if (idx.size() > count) idx.resize(count);
  return idx;
}

}  // namespace vsgp
