#include <fstream>
#include <map>

#include <json.hpp>

#include "vsgp/io.hpp"
#include "vsgp/pipeline.hpp"

namespace vsgp {

namespace {

using nlohmann::json;

json load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError(Stage::Emit, "missing " + path.string());
  return json::parse(in);
}

// Unit directories sit at <root>/<strategy>_M<m>/split_<r>.
std::vector<std::filesystem::path> unit_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& group : std::filesystem::directory_iterator(root)) {
    if (!group.is_directory() || group.path().filename() == "plots") continue;
    for (const auto& split : std::filesystem::directory_iterator(group.path())) {
      if (split.is_directory() && std::filesystem::exists(split.path() / "metrics.json")) {
        dirs.push_back(split.path());
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::string tag_of(const std::filesystem::path& unit) {
  return unit.parent_path().filename().string() + "_" + unit.filename().string();
}

const std::vector<std::string> kMethods{"vb", "hmc", "gibbs"};

}  // namespace

void emit_plot_data(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw PipelineError(Stage::Emit, "no run directory " + root.string());
  const auto units = unit_dirs(root);
  if (units.empty()) throw PipelineError(Stage::Emit, "no completed units under " + root.string());

  // Everything is assembled in memory first so a failure leaves no partial output.
  std::map<std::string, Table> out;
  Table lpd;
  lpd.columns = {"num_inducing", "strategy", "split", "method", "mean_log_density", "accuracy"};
  std::vector<std::array<double, 6>> lpd_rows;

  try {
    for (const auto& unit : units) {
      const json m = load(unit / "metrics.json");
      const std::string tag = tag_of(unit);
      const double strategy = m["unit"]["strategy"] == "vb-optimized" ? 0.0 : 1.0;
      for (std::size_t k = 0; k < kMethods.size(); ++k) {
        const auto& method = kMethods[k];
        if (!m.contains(method)) continue;
        const json& r = m[method];
        lpd_rows.push_back({m["unit"]["num_inducing"].get<double>(), strategy,
                            m["unit"]["repetition"].get<double>(), static_cast<double>(k),
                            r["mean_log_density"].get<double>(),
                            r["accuracy"].is_null() ? std::nan("") : r["accuracy"].get<double>()});
      }

      const auto names = m["theta_names"].get<std::vector<std::string>>();
      {
        Table vb;
        for (const auto& n : names) vb.columns.push_back(n.substr(4));  // drop "log_"
        const auto theta = m["vb_theta"].get<std::vector<double>>();
        vb.values.resize(1, static_cast<Eigen::Index>(theta.size()));
        for (std::size_t i = 0; i < theta.size(); ++i) vb.values(0, static_cast<Eigen::Index>(i)) = std::exp(theta[i]);
        out["hyper_vb_" + tag + ".txt"] = vb;
      }
      for (const std::string sampler : {"hmc", "gibbs"}) {
        const auto chain_path = unit / ("chain_" + sampler + "_0.txt");
        if (!std::filesystem::exists(chain_path)) continue;
        const Chain c = read_chain(chain_path);
        if (c.size() == 0) throw PipelineError(Stage::Emit, "empty chain " + chain_path.string());
        Table h;
        for (const auto& n : names) h.columns.push_back(n.substr(4));
        h.values = c.states.rightCols(static_cast<Eigen::Index>(names.size())).array().exp();
        out["hyper_samples_" + sampler + "_" + tag + ".txt"] = h;
        const auto psrf_path = unit / ("psrf_" + sampler + ".txt");
        if (std::filesystem::exists(psrf_path)) out["psrf_" + sampler + "_" + tag + ".txt"] = read_table(psrf_path);
      }
      for (const auto& method : kMethods) {
        const auto bands = unit / ("rate_bands_" + method + ".txt");
        if (std::filesystem::exists(bands)) out["rate_" + method + "_" + tag + ".txt"] = read_table(bands);
        const auto eval = unit / ("predictions_" + method + "_eval.txt");
        if (std::filesystem::exists(eval)) out["eval_" + method + "_" + tag + ".txt"] = read_table(eval);
      }
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Emit, e.what());
  }

  lpd.values.resize(static_cast<Eigen::Index>(lpd_rows.size()), 6);
  for (std::size_t r = 0; r < lpd_rows.size(); ++r) {
    for (Eigen::Index c = 0; c < 6; ++c) lpd.values(static_cast<Eigen::Index>(r), c) = lpd_rows[r][static_cast<std::size_t>(c)];
  }
  out["log_predictive_density.txt"] = lpd;

  const auto plots = root / "plots";
  std::filesystem::create_directories(plots);
  for (const auto& [name, table] : out) write_table(plots / name, table);
}

}  // namespace vsgp
