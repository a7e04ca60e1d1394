#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "vsgp/io.hpp"

namespace vsgp {

std::string format_double(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> coordinate_names(const ModelSpec& model) {
  std::vector<std::string> names;
  for (int p = 0; p < model.num_latent(); ++p) {
    for (Eigen::Index i = 0; i < model.num_inducing(); ++i) {
      names.push_back("v[" + std::to_string(i) + "," + std::to_string(p) + "]");
    }
  }
  for (auto& n : model.theta_names()) names.push_back(n);
  return names;
}

void write_chain(const std::filesystem::path& path, const Chain& chain,
                 const std::vector<std::string>& coordinate_names) {
  if (static_cast<Eigen::Index>(coordinate_names.size()) != chain.states.cols()) {
    throw FormatError("chain has " + std::to_string(chain.states.cols()) + " coordinates but " +
                      std::to_string(coordinate_names.size()) + " names");
  }
  std::ostringstream out;
  out << "# vsgp-chain 1\n";
  out << "# step_size " << format_double(chain.config.step_size) << '\n';
  out << "# max_leapfrog " << chain.config.max_leapfrog << '\n';
  out << "# iterations " << chain.config.iterations << '\n';
  out << "# burn_in " << chain.config.burn_in << '\n';
  out << "# seed " << chain.config.seed << '\n';
  out << "# wall_clock_seconds " << format_double(chain.wall_clock_seconds) << '\n';
  out << "iteration log_density accepted accepted_theta";
  for (const auto& n : coordinate_names) out << ' ' << n;
  out << '\n';
  const bool gibbs = !chain.accepted_theta.empty();
  for (Eigen::Index s = 0; s < chain.size(); ++s) {
    const auto k = static_cast<std::size_t>(s);
    out << chain.iteration[k] << ' ' << format_double(chain.log_density(s)) << ' '
        << int{chain.accepted[k]} << ' ' << (gibbs ? int{chain.accepted_theta[k]} : -1);
    for (Eigen::Index j = 0; j < chain.states.cols(); ++j) out << ' ' << format_double(chain.states(s, j));
    out << '\n';
  }
  write_atomically(path, out.str());
}

Chain read_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open chain " + path.string());
  Chain chain;
  std::map<std::string, std::string> meta;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key, value;
      ls >> key >> value;
      meta[key] = value;
      continue;
    }
    std::istringstream ls(line);
    for (std::string w; ls >> w;) header.push_back(w);
    break;
  }
  if (header.size() < 4 || header[0] != "iteration") throw FormatError("chain header missing");
  const auto dim = static_cast<Eigen::Index>(header.size() - 4);
  std::vector<double> flat;
  Eigen::Index rows = 0;
  bool gibbs = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long it = 0;
    double ld = 0.0;
    int acc = 0, acc_theta = 0;
    if (!(ls >> it >> ld >> acc >> acc_theta)) throw FormatError("bad chain row " + std::to_string(rows));
    chain.iteration.push_back(it);
    chain.accepted.push_back(static_cast<std::uint8_t>(acc));
    if (acc_theta >= 0) {
      gibbs = true;
      chain.accepted_theta.push_back(static_cast<std::uint8_t>(acc_theta));
    }
    flat.push_back(ld);
    for (Eigen::Index j = 0; j < dim; ++j) {
      double x;
      if (!(ls >> x)) throw FormatError("short chain row " + std::to_string(rows));
      flat.push_back(x);
    }
    ++rows;
  }
  if (gibbs && static_cast<Eigen::Index>(chain.accepted_theta.size()) != rows) {
    throw FormatError("chain mixes Gibbs and HMC rows");
  }
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> all(
      flat.data(), rows, dim + 1);
  chain.log_density = all.col(0);
  chain.states = all.rightCols(dim);
  auto get = [&](const char* key, const std::string& fallback) {
    const auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  };
  chain.config.step_size = std::stod(get("step_size", "0"));
  chain.config.max_leapfrog = std::stoi(get("max_leapfrog", "1"));
  chain.config.iterations = std::stoi(get("iterations", std::to_string(rows)));
  chain.config.burn_in = std::stoi(get("burn_in", "0"));
  chain.config.seed = std::stoull(get("seed", "0"));
  chain.wall_clock_seconds = std::stod(get("wall_clock_seconds", "0"));
  return chain;
}

void write_prediction(const std::filesystem::path& path, const Prediction& prediction,
                      const Eigen::MatrixXd* coords) {
  Table t;
  const Eigen::Index n = prediction.mean.rows();
  const Eigen::Index P = prediction.mean.cols();
  const Eigen::Index R = prediction.response.cols();
  const bool dens = prediction.log_density.size() == n;
  t.columns.push_back("id");
  const Eigen::Index D = coords ? coords->cols() : 0;
  if (coords && coords->rows() != n) throw FormatError("prediction coordinates have wrong length");
  for (Eigen::Index d = 0; d < D; ++d) t.columns.push_back("x" + std::to_string(d));
  for (Eigen::Index p = 0; p < P; ++p) t.columns.push_back("mean_" + std::to_string(p));
  for (Eigen::Index p = 0; p < P; ++p) t.columns.push_back("var_" + std::to_string(p));
  if (dens) t.columns.emplace_back("log_density");
  for (Eigen::Index r = 0; r < R; ++r) {
    t.columns.push_back(R == 1 ? "response" : "p_" + std::to_string(r));
  }
  t.values.resize(n, static_cast<Eigen::Index>(t.columns.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index c = 0;
    t.values(i, c++) = static_cast<double>(i);
    for (Eigen::Index d = 0; d < D; ++d) t.values(i, c++) = (*coords)(i, d);
    for (Eigen::Index p = 0; p < P; ++p) t.values(i, c++) = prediction.mean(i, p);
    for (Eigen::Index p = 0; p < P; ++p) t.values(i, c++) = prediction.variance(i, p);
    if (dens) t.values(i, c++) = prediction.log_density(i);
    for (Eigen::Index r = 0; r < R; ++r) t.values(i, c++) = prediction.response(i, r);
  }
  write_table(path, t);
}

Eigen::Index Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw FormatError("table has no column '" + name + "'");
}

void write_table(const std::filesystem::path& path, const Table& table) {
  if (static_cast<Eigen::Index>(table.columns.size()) != table.values.cols()) {
    throw FormatError("table header and body disagree");
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? " " : "") << table.columns[i];
  out << '\n';
  for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      out << (c ? " " : "") << format_double(table.values(r, c));
    }
    out << '\n';
  }
  write_atomically(path, out.str());
}

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open table " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty table " + path.string());
  std::istringstream hs(line);
  for (std::string w; hs >> w;) t.columns.push_back(w);
  std::vector<double> flat;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::string w;
      if (!(ls >> w)) throw FormatError("short row in " + path.string());
      flat.push_back(std::stod(w));
    }
    ++rows;
  }
  t.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), rows, static_cast<Eigen::Index>(t.columns.size()));
  return t;
}

}  // namespace vsgp
