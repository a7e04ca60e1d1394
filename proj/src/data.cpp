#include "vsgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

#include "vsgp/kernel.hpp"
#include "vsgp/linalg.hpp"

namespace vsgp {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::string normalized = line;
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::replace(normalized.begin(), normalized.end(), '\t', ' ');
  std::istringstream in(normalized);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool parse_number(const std::string& s, double& x) {
  try {
    std::size_t used = 0;
    x = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

}  // namespace

Dataset load_table(const std::filesystem::path& path, const std::string& response) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (skippable(line)) continue;
    header = split_fields(line);
    break;
  }
  const auto at = std::find(header.begin(), header.end(), response);
  if (at == header.end()) throw DataError(path.string() + " has no column '" + response + "'");
  const auto target = static_cast<std::size_t>(at - header.begin());
  if (header.size() < 2) throw DataError(path.string() + " needs at least one input column");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (skippable(line)) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields");
    }
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_number(fields[i], row[i])) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                        fields[i] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + " has no rows");
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
  d.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == target) {
        d.y(static_cast<Eigen::Index>(r)) = rows[r][i];
      } else {
        d.X(static_cast<Eigen::Index>(r), c++) = rows[r][i];
      }
    }
  }
  return d;
}

Eigen::MatrixXd load_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skippable(line)) continue;
    const auto fields = split_fields(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) numeric = numeric && parse_number(fields[i], row[i]);
    if (!numeric) {
      if (header_seen || !rows.empty()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric row");
      }
      header_seen = true;
      continue;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + " has no events");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return out;
}

void GridSpec::validate() const {
  if (lower.size() == 0 || upper.size() != lower.size() ||
      bins.size() != static_cast<std::size_t>(lower.size())) {
    throw DataError("grid needs matching bounds and bin counts per dimension");
  }
  for (Eigen::Index d = 0; d < lower.size(); ++d) {
    if (!std::isfinite(lower(d)) || !std::isfinite(upper(d)) || !(lower(d) < upper(d))) {
      throw DataError("grid bounds must be finite with lower < upper");
    }
    if (bins[static_cast<std::size_t>(d)] < 1) throw DataError("grid needs at least one bin per dimension");
  }
}

Eigen::Index GridSpec::cells() const {
  Eigen::Index n = 1;
  for (int b : bins) n *= b;
  return n;
}

double GridSpec::cell_volume() const {
  double v = 1.0;
  for (Eigen::Index d = 0; d < dim(); ++d) v *= (upper(d) - lower(d)) / bins[static_cast<std::size_t>(d)];
  return v;
}

Eigen::MatrixXd GridSpec::centers() const {
  validate();
  Eigen::MatrixXd out(cells(), dim());
  for (Eigen::Index cell = 0; cell < cells(); ++cell) {
    Eigen::Index rest = cell;
    for (Eigen::Index d = dim() - 1; d >= 0; --d) {
      const int b = bins[static_cast<std::size_t>(d)];
      const Eigen::Index k = rest % b;
      rest /= b;
      const double width = (upper(d) - lower(d)) / b;
      out(cell, d) = lower(d) + (static_cast<double>(k) + 0.5) * width;
    }
  }
  return out;
}

BinnedEvents bin_events(const Eigen::MatrixXd& events, const GridSpec& grid) {
  grid.validate();
  if (events.cols() != grid.dim()) throw DataError("events and grid differ in dimension");
  BinnedEvents out;
  out.data.X = grid.centers();
  out.data.y = Eigen::VectorXd::Zero(grid.cells());
  out.bin_measure = grid.cell_volume();
  for (Eigen::Index e = 0; e < events.rows(); ++e) {
    Eigen::Index cell = 0;
    bool inside = true;
    for (Eigen::Index d = 0; d < grid.dim() && inside; ++d) {
      const int b = grid.bins[static_cast<std::size_t>(d)];
      const double x = events(e, d);
      if (!(x >= grid.lower(d) && x <= grid.upper(d))) {
        inside = false;
        break;
      }
      auto k = static_cast<Eigen::Index>(std::floor((x - grid.lower(d)) / (grid.upper(d) - grid.lower(d)) * b));
      k = std::min<Eigen::Index>(k, b - 1);
      cell = cell * b + k;
    }
    if (inside) {
      out.data.y(cell) += 1.0;
    } else {
      ++out.outside;
    }
  }
  return out;
}

Dataset make_toy_multiclass(std::uint64_t seed) {
  struct Component {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
  };
  std::vector<Component> comps(3);
  comps[0].mean << -1.0, 0.0;
  comps[0].cov << 0.60, 0.35, 0.35, 0.45;
  comps[1].mean << 1.0, 0.0;
  comps[1].cov << 0.60, -0.35, -0.35, 0.45;
  comps[2].mean << 0.0, 1.1;
  comps[2].cov << 1.20, 0.0, 0.0, 0.12;
  constexpr int per_class = 250;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.X.resize(3 * per_class, 2);
  d.y.resize(3 * per_class);
  for (int k = 0; k < 3; ++k) {
    const Eigen::Matrix2d L = comps[static_cast<std::size_t>(k)].cov.llt().matrixL();
    for (int i = 0; i < per_class; ++i) {
      const Eigen::Vector2d z(normal(rng), normal(rng));
      const int row = k * per_class + i;
      d.X.row(row) = (comps[static_cast<std::size_t>(k)].mean + L * z).transpose();
      d.y(row) = k;
    }
  }
  return d;
}

Eigen::MatrixXd make_synthetic_pines(std::uint64_t seed) {
  constexpr int side = 64;
  GridSpec lattice{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 1.0), {side, side}};
  const Eigen::MatrixXd centers = lattice.centers();
  const Eigen::MatrixXd K = kuu(KernelParams::rbf(1.0, 0.15), centers);
  const CholeskyFactor chol = cholesky(K);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(centers.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  const Eigen::VectorXd log_intensity = (chol.lower * z).array() + std::log(120.0);

  const double area = lattice.cell_volume();
  const double width = 1.0 / side;
  std::uniform_real_distribution<double> offset(-0.5 * width, 0.5 * width);
  std::vector<Eigen::Vector2d> points;
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    std::poisson_distribution<int> count(std::exp(log_intensity(c)) * area);
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      points.emplace_back(centers(c, 0) + offset(rng), centers(c, 1) + offset(rng));
    }
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return out;
}

Split random_split(Eigen::Index n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("split fraction must be in (0, 1)");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the permutation does not depend on the standard
  // library's shuffle.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= order.size()) throw DataError("split leaves an empty side");
  Split s;
  s.test.assign(order.begin(), order.begin() + static_cast<long>(n_test));
  s.train.assign(order.begin() + static_cast<long>(n_test), order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Eigen::MatrixXd to_unit_box(const Eigen::MatrixXd& X, const Eigen::VectorXd& lower,
                            const Eigen::VectorXd& upper) {
  if (lower.size() != X.cols() || upper.size() != X.cols()) throw DataError("box has wrong dimension");
  Eigen::MatrixXd out = X;
  for (Eigen::Index d = 0; d < X.cols(); ++d) {
    out.col(d) = (X.col(d).array() - lower(d)) / (upper(d) - lower(d));
  }
  return out;
}

}  // namespace vsgp
