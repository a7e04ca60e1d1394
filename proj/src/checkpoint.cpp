#include <fstream>
#include <sstream>

#include "vsgp/io.hpp"

namespace vsgp {

namespace {

void expect(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word) {
    throw FormatError("checkpoint: expected '" + word + "', found '" + got + "'");
  }
}

template <typename T>
T next(std::istream& in, const char* what) {
  T value;
  if (!(in >> value)) throw FormatError(std::string("checkpoint: could not read ") + what);
  return value;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out << (j ? " " : "") << format_double(a(i, j));
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) a(i, j) = next<double>(in, "matrix entry");
  }
  return a;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const GaussianApprox& approx) {
  std::ostringstream out;
  out << "vsgp-checkpoint 1\n";
  out << "dims " << approx.m.rows() << ' ' << approx.m.cols() << ' ' << approx.Z.cols() << ' '
      << approx.theta.size() << '\n';
  out << "theta";
  for (Eigen::Index i = 0; i < approx.theta.size(); ++i) out << ' ' << format_double(approx.theta(i));
  out << "\nZ\n";
  write_matrix(out, approx.Z);
  out << "m\n";
  write_matrix(out, approx.m);
  for (std::size_t p = 0; p < approx.L.size(); ++p) {
    out << "L " << p << '\n';
    write_matrix(out, approx.L[p]);
  }
  write_atomically(path, out.str());
}

GaussianApprox read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  expect(in, "vsgp-checkpoint");
  if (next<int>(in, "version") != 1) throw FormatError("unsupported checkpoint version");
  expect(in, "dims");
  const auto M = next<Eigen::Index>(in, "M");
  const auto P = next<Eigen::Index>(in, "P");
  const auto D = next<Eigen::Index>(in, "D");
  const auto T = next<Eigen::Index>(in, "T");
  if (M < 1 || P < 1 || D < 1 || T < 1) throw FormatError("checkpoint dimensions must be positive");
  GaussianApprox q;
  expect(in, "theta");
  q.theta = read_matrix(in, T, 1);
  expect(in, "Z");
  q.Z = read_matrix(in, M, D);
  expect(in, "m");
  q.m = read_matrix(in, M, P);
  for (Eigen::Index p = 0; p < P; ++p) {
    expect(in, "L");
    if (next<Eigen::Index>(in, "factor index") != p) throw FormatError("checkpoint factors out of order");
    q.L.push_back(read_matrix(in, M, M));
  }
  return q;
}

}  // namespace vsgp
