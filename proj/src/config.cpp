#include "vsgp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace vsgp {

namespace {

using nlohmann::json;

void allow_only(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

GridSpec parse_grid(const json& j, const std::string& where) {
  allow_only(j, where, {"lower", "upper", "bins"});
  std::vector<double> lower, upper;
  GridSpec g;
  read(j, "lower", lower);
  read(j, "upper", upper);
  read(j, "bins", g.bins);
  g.lower = to_vector(lower);
  g.upper = to_vector(upper);
  try {
    g.validate();
  } catch (const DataError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return g;
}

json grid_json(const GridSpec& g) {
  return json{{"lower", to_std(g.lower)}, {"upper", to_std(g.upper)}, {"bins", g.bins}};
}

template <typename E>
E lookup(const std::string& text, const std::vector<std::pair<std::string, E>>& table,
         const std::string& what) {
  for (const auto& [name, value] : table) {
    if (name == text) return value;
  }
  throw ConfigError("unknown " + what + " '" + text + "'");
}

template <typename E>
std::string name_of(E value, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "?";
}

const std::vector<std::pair<std::string, DataSource>> kSources{
    {"table", DataSource::Table},
    {"events", DataSource::Events},
    {"toy-multiclass", DataSource::ToyMulticlass},
    {"synthetic-pines", DataSource::SyntheticPines}};
const std::vector<std::pair<std::string, KernelKind>> kKernels{{"rbf", KernelKind::Rbf},
                                                                {"ard", KernelKind::Ard}};
const std::vector<std::pair<std::string, InducingStrategy>> kStrategies{
    {"vb-optimized", InducingStrategy::VbOptimized}, {"kmeans-fixed", InducingStrategy::KmeansFixed}};
const std::vector<std::pair<std::string, InducingPlacement>> kPlacements{
    {"kmeans", InducingPlacement::Kmeans}, {"grid", InducingPlacement::Grid}};
const std::vector<std::pair<std::string, OptimizerKind>> kOptimizers{{"lbfgs", OptimizerKind::Lbfgs},
                                                                      {"adam", OptimizerKind::Adam}};

}  // namespace

void ExperimentConfig::validate() const {
  const bool events = dataset.source == DataSource::Events || dataset.source == DataSource::SyntheticPines;
  if ((dataset.source == DataSource::Table || dataset.source == DataSource::Events) &&
      !std::filesystem::exists(dataset.path)) {
    throw ConfigError("data file does not exist: " + dataset.path.string());
  }
  if (events && !dataset.grid) throw ConfigError("event data needs a grid");
  if (events != (likelihood.family == "poisson")) {
    throw ConfigError("event data and the poisson likelihood go together");
  }
  static const std::set<std::string> families{"gaussian", "poisson", "probit", "robustmax"};
  if (!families.count(likelihood.family)) throw ConfigError("unknown likelihood '" + likelihood.family + "'");
  if (likelihood.family == "robustmax" &&
      (likelihood.num_classes < 2 || !(likelihood.epsilon > 0.0 && likelihood.epsilon < 1.0))) {
    throw ConfigError("robustmax needs num_classes >= 2 and epsilon in (0, 1)");
  }
  if (!(likelihood.noise_variance > 0.0) || !(initial_variance > 0.0)) {
    throw ConfigError("initial variances must be positive");
  }
  if (initial_lengthscales.empty()) throw ConfigError("need at least one initial lengthscale");
  for (double l : initial_lengthscales) {
    if (!(l > 0.0)) throw ConfigError("initial lengthscales must be positive");
  }
  for (const auto& p : priors) {
    if (!(p.shape > 0.0) || !(p.rate > 0.0)) throw ConfigError("prior shape and rate must be positive");
  }
  if (inducing.counts.empty() || inducing.strategies.empty()) {
    throw ConfigError("need at least one inducing count and strategy");
  }
  for (int m : inducing.counts) {
    if (m < 1) throw ConfigError("inducing counts must be >= 1");
  }
  if (split) {
    if (!(split->test_fraction > 0.0 && split->test_fraction < 1.0)) {
      throw ConfigError("split fraction must be in (0, 1)");
    }
    if (split->repetitions < 1) throw ConfigError("split repetitions must be >= 1");
  }
  if (vb.phase_a_iterations < 0 || vb.max_iterations < 0) throw ConfigError("VB iteration counts must be >= 0");
  if (tune.candidates < 1 || tune.samples_per_candidate < 1 || tune.max_leapfrog_grid.empty()) {
    throw ConfigError("tuning budget must be at least one pilot of one sample");
  }
  if (sampler.iterations < 1 || sampler.burn_in < 0 || sampler.burn_in >= sampler.iterations) {
    throw ConfigError("sampler needs 0 <= burn_in < iterations");
  }
  if (sampler.iterations - sampler.burn_in < 10) throw ConfigError("sampler must retain at least 10 draws");
  if (sampler.chains < 1) throw ConfigError("sampler needs at least one chain");
  if (sampler.step_size.has_value() != sampler.max_leapfrog.has_value()) {
    throw ConfigError("fixed HMC settings need both step_size and max_leapfrog");
  }
  if (sampler.psrf_points < 1) throw ConfigError("psrf_points must be >= 1");
}

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  allow_only(root, "config", {"name", "seed", "dataset", "kernel", "likelihood", "initial", "priors",
                              "inducing", "split", "vb", "tune", "sampler", "eval_grid", "output", "nugget"});
  ExperimentConfig c;
  read(root, "name", c.name);
  read(root, "seed", c.seed);
  c.vb.seed = c.seed;
  c.tune.seed = c.seed;

  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    allow_only(d, "dataset", {"source", "path", "response", "grid", "unit_inputs", "seed"});
    std::string source = "table";
    read(d, "source", source);
    c.dataset.source = lookup(source, kSources, "data source");
    std::string path;
    read(d, "path", path);
    if (!path.empty()) {
      c.dataset.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
    }
    read(d, "response", c.dataset.response);
    read(d, "unit_inputs", c.dataset.unit_inputs);
    read(d, "seed", c.dataset.seed);
    if (d.contains("grid")) c.dataset.grid = parse_grid(d["grid"], "dataset.grid");
  }
  if (root.contains("kernel")) c.kernel = lookup(root["kernel"].get<std::string>(), kKernels, "kernel");
  if (root.contains("likelihood")) {
    const json& l = root["likelihood"];
    allow_only(l, "likelihood", {"family", "noise_variance", "epsilon", "num_classes"});
    read(l, "family", c.likelihood.family);
    read(l, "noise_variance", c.likelihood.noise_variance);
    read(l, "epsilon", c.likelihood.epsilon);
    read(l, "num_classes", c.likelihood.num_classes);
  }
  if (root.contains("initial")) {
    const json& i = root["initial"];
    allow_only(i, "initial", {"variance", "lengthscales"});
    read(i, "variance", c.initial_variance);
    read(i, "lengthscales", c.initial_lengthscales);
  }
  read(root, "nugget", c.nugget);
  if (!(c.nugget >= 0.0) || !std::isfinite(c.nugget)) throw ConfigError("nugget must be non-negative and finite");
  if (root.contains("priors")) {
    for (const json& p : root["priors"]) {
      allow_only(p, "priors[]", {"shape", "rate"});
      GammaPrior g;
      read(p, "shape", g.shape);
      read(p, "rate", g.rate);
      c.priors.push_back(g);
    }
  }
  if (root.contains("inducing")) {
    const json& i = root["inducing"];
    allow_only(i, "inducing", {"counts", "strategies", "placement"});
    read(i, "counts", c.inducing.counts);
    if (i.contains("strategies")) {
      c.inducing.strategies.clear();
      for (const json& s : i["strategies"]) {
        c.inducing.strategies.push_back(lookup(s.get<std::string>(), kStrategies, "inducing strategy"));
      }
    }
    if (i.contains("placement")) {
      c.inducing.placement = lookup(i["placement"].get<std::string>(), kPlacements, "placement");
    }
  }
  if (root.contains("split") && !root["split"].is_null()) {
    const json& s = root["split"];
    allow_only(s, "split", {"test_fraction", "seed", "repetitions"});
    SplitConfig sc;
    read(s, "test_fraction", sc.test_fraction);
    read(s, "seed", sc.seed);
    read(s, "repetitions", sc.repetitions);
    c.split = sc;
  }
  if (root.contains("vb")) {
    const json& v = root["vb"];
    allow_only(v, "vb", {"phase_a_iterations", "max_iterations", "gradient_tolerance", "optimizer",
                         "adam_learning_rate", "optimize_theta", "seed"});
    read(v, "phase_a_iterations", c.vb.phase_a_iterations);
    read(v, "max_iterations", c.vb.max_iterations);
    read(v, "gradient_tolerance", c.vb.gradient_tolerance);
    read(v, "adam_learning_rate", c.vb.adam_learning_rate);
    read(v, "optimize_theta", c.vb.optimize_theta);
    read(v, "seed", c.vb.seed);
    if (v.contains("optimizer")) c.vb.optimizer = lookup(v["optimizer"].get<std::string>(), kOptimizers, "optimizer");
  }
  if (root.contains("tune")) {
    const json& t = root["tune"];
    allow_only(t, "tune", {"candidates", "samples_per_candidate", "max_leapfrog_grid", "min_step",
                           "max_step", "seed"});
    read(t, "candidates", c.tune.candidates);
    read(t, "samples_per_candidate", c.tune.samples_per_candidate);
    read(t, "max_leapfrog_grid", c.tune.max_leapfrog_grid);
    read(t, "min_step", c.tune.min_step);
    read(t, "max_step", c.tune.max_step);
    read(t, "seed", c.tune.seed);
  }
  if (root.contains("sampler")) {
    const json& s = root["sampler"];
    allow_only(s, "sampler", {"iterations", "burn_in", "step_size", "max_leapfrog", "chains", "gibbs",
                              "psrf_points", "split_psrf"});
    read(s, "iterations", c.sampler.iterations);
    read(s, "burn_in", c.sampler.burn_in);
    if (s.contains("step_size")) c.sampler.step_size = s["step_size"].get<double>();
    if (s.contains("max_leapfrog")) c.sampler.max_leapfrog = s["max_leapfrog"].get<int>();
    read(s, "chains", c.sampler.chains);
    read(s, "gibbs", c.sampler.gibbs);
    read(s, "psrf_points", c.sampler.psrf_points);
    read(s, "split_psrf", c.sampler.split_psrf);
  }
  if (root.contains("eval_grid")) c.eval_grid = parse_grid(root["eval_grid"], "eval_grid");
  if (root.contains("output")) c.output = root["output"].get<std::string>();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  json d{{"source", name_of(c.dataset.source, kSources)},
         {"path", c.dataset.path.string()},
         {"response", c.dataset.response},
         {"unit_inputs", c.dataset.unit_inputs},
         {"seed", c.dataset.seed}};
  if (c.dataset.grid) d["grid"] = grid_json(*c.dataset.grid);
  j["dataset"] = d;
  j["kernel"] = name_of(c.kernel, kKernels);
  j["likelihood"] = {{"family", c.likelihood.family},
                     {"noise_variance", c.likelihood.noise_variance},
                     {"epsilon", c.likelihood.epsilon},
                     {"num_classes", c.likelihood.num_classes}};
  j["initial"] = {{"variance", c.initial_variance}, {"lengthscales", c.initial_lengthscales}};
  j["nugget"] = c.nugget;
  j["priors"] = json::array();
  for (const auto& p : c.priors) j["priors"].push_back({{"shape", p.shape}, {"rate", p.rate}});
  json strategies = json::array();
  for (auto s : c.inducing.strategies) strategies.push_back(name_of(s, kStrategies));
  j["inducing"] = {{"counts", c.inducing.counts},
                   {"strategies", strategies},
                   {"placement", name_of(c.inducing.placement, kPlacements)}};
  if (c.split) {
    j["split"] = {{"test_fraction", c.split->test_fraction},
                  {"seed", c.split->seed},
                  {"repetitions", c.split->repetitions}};
  } else {
    j["split"] = nullptr;
  }
  j["vb"] = {{"phase_a_iterations", c.vb.phase_a_iterations},
             {"max_iterations", c.vb.max_iterations},
             {"gradient_tolerance", c.vb.gradient_tolerance},
             {"optimizer", name_of(c.vb.optimizer, kOptimizers)},
             {"adam_learning_rate", c.vb.adam_learning_rate},
             {"optimize_theta", c.vb.optimize_theta},
             {"seed", c.vb.seed}};
  j["tune"] = {{"candidates", c.tune.candidates},
               {"samples_per_candidate", c.tune.samples_per_candidate},
               {"max_leapfrog_grid", c.tune.max_leapfrog_grid},
               {"min_step", c.tune.min_step},
               {"max_step", c.tune.max_step},
               {"seed", c.tune.seed}};
  json s{{"iterations", c.sampler.iterations},
         {"burn_in", c.sampler.burn_in},
         {"chains", c.sampler.chains},
         {"gibbs", c.sampler.gibbs},
         {"psrf_points", c.sampler.psrf_points},
         {"split_psrf", c.sampler.split_psrf}};
  if (c.sampler.step_size) s["step_size"] = *c.sampler.step_size;
  if (c.sampler.max_leapfrog) s["max_leapfrog"] = *c.sampler.max_leapfrog;
  j["sampler"] = s;
  if (c.eval_grid) j["eval_grid"] = grid_json(*c.eval_grid);
  j["output"] = c.output.string();
  return j.dump(2) + "\n";
}

}  // namespace vsgp
