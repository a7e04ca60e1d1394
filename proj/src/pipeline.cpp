#include "vsgp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <json.hpp>

#include "vsgp/diagnostics.hpp"
#include "vsgp/io.hpp"
#include "vsgp/kmeans.hpp"
#include "vsgp/objective.hpp"

namespace vsgp {

namespace {

using nlohmann::json;

const char* strategy_name(InducingStrategy s) {
  return s == InducingStrategy::VbOptimized ? "vb-optimized" : "kmeans-fixed";
}

json read_json(const std::filesystem::path& path, Stage stage) {
  std::ifstream in(path);
  if (!in) throw PipelineError(stage, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw PipelineError(stage, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_atomically(path, j.dump(2) + "\n");
}

json theta_json(const Eigen::VectorXd& theta) {
  return std::vector<double>(theta.data(), theta.data() + theta.size());
}

json metrics_json(const Metrics& m) {
  return json{{"mean_log_density", m.mean_log_density},
              {"accuracy", std::isfinite(m.accuracy) ? json(m.accuracy) : json(nullptr)},
              {"count", m.count}};
}

std::vector<std::filesystem::path> chain_files(const std::filesystem::path& dir, const std::string& sampler) {
  std::vector<std::filesystem::path> files;
  for (int c = 0;; ++c) {
    auto p = dir / ("chain_" + sampler + "_" + std::to_string(c) + ".txt");
    if (!std::filesystem::exists(p)) break;
    files.push_back(p);
  }
  return files;
}

// Runs f(c) for c in [0, n) on separate threads and rethrows the first failure.
template <typename F>
void parallel_for(int n, F&& f) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> threads;
  for (int c = 0; c < n; ++c) {
    threads.emplace_back([&, c] {
      try {
        f(c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Chain pool(const std::vector<Chain>& chains) {
  Chain out = chains.front();
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.size();
  out.states.resize(rows, chains.front().states.cols());
  out.log_density.resize(rows);
  Eigen::Index at = 0;
  for (const auto& c : chains) {
    out.states.middleRows(at, c.size()) = c.states;
    out.log_density.segment(at, c.size()) = c.log_density;
    at += c.size();
  }
  return out;
}

std::vector<Chain> load_chains(const std::filesystem::path& dir, const std::string& sampler) {
  std::vector<Chain> chains;
  for (const auto& f : chain_files(dir, sampler)) chains.push_back(read_chain(f));
  return chains;
}

HmcConfig sampler_base(const ExperimentConfig& config) {
  HmcConfig h;
  h.iterations = config.sampler.iterations;
  h.burn_in = config.sampler.burn_in;
  return h;
}

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Config: return "config";
    case Stage::Data: return "data";
    case Stage::Vb: return "fit-vb";
    case Stage::Tune: return "tune";
    case Stage::Sample: return "sample";
    case Stage::Predict: return "predict";
    case Stage::Diagnose: return "diagnose";
    case Stage::Emit: return "emit-plots";
  }
  return "unknown";
}

Eigen::MatrixXd PreparedData::to_original(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out = X;
  for (Eigen::Index d = 0; d < X.cols(); ++d) out.col(d) = offset(d) + scale(d) * X.col(d).array();
  return out;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData p;
  const DatasetConfig& dc = config.dataset;
  const std::string& family = config.likelihood.family;
  auto scale_grid = [&](GridSpec g) {
    for (Eigen::Index d = 0; d < g.dim(); ++d) {
      g.lower(d) = (g.lower(d) - p.offset(d)) / p.scale(d);
      g.upper(d) = (g.upper(d) - p.offset(d)) / p.scale(d);
    }
    return g;
  };

  if (dc.source == DataSource::Events || dc.source == DataSource::SyntheticPines) {
    const GridSpec& grid = *dc.grid;
    Eigen::MatrixXd events =
        dc.source == DataSource::Events ? load_events(dc.path) : make_synthetic_pines(dc.seed);
    p.offset = Eigen::VectorXd::Zero(grid.dim());
    p.scale = Eigen::VectorXd::Ones(grid.dim());
    if (dc.unit_inputs) {
      p.offset = grid.lower;
      p.scale = grid.upper - grid.lower;
    }
    p.original_cell_volume = grid.cell_volume();
    p.grid = scale_grid(grid);
    if (events.cols() != grid.dim()) throw DataError("events and grid differ in dimension");
    for (Eigen::Index d = 0; d < events.cols(); ++d) {
      events.col(d) = (events.col(d).array() - p.offset(d)) / p.scale(d);
    }
    p.events = events;
    BinnedEvents binned = bin_events(events, *p.grid);
    p.data = std::move(binned.data);
    p.outside = binned.outside;
    p.likelihood = Poisson{Eigen::VectorXd::Constant(1, binned.bin_measure)};
  } else {
    p.data = dc.source == DataSource::Table ? load_table(dc.path, dc.response)
                                            : make_toy_multiclass(dc.seed);
    const Eigen::Index D = p.data.input_dim();
    p.offset = Eigen::VectorXd::Zero(D);
    p.scale = Eigen::VectorXd::Ones(D);
    if (dc.unit_inputs) {
      p.offset = p.data.X.colwise().minCoeff().transpose();
      p.scale = p.data.X.colwise().maxCoeff().transpose() - p.offset;
      for (Eigen::Index d = 0; d < D; ++d) {
        if (!(p.scale(d) > 0.0)) p.scale(d) = 1.0;
      }
      p.data.X = to_unit_box(p.data.X, p.offset, p.offset + p.scale);
    }
    if (family == "gaussian") {
      p.likelihood = Gaussian{config.likelihood.noise_variance};
    } else if (family == "probit") {
      p.likelihood = BernoulliProbit{};
    } else if (family == "robustmax") {
      p.likelihood = RobustMax{config.likelihood.epsilon, config.likelihood.num_classes};
    } else {
      throw DataError("likelihood '" + family + "' does not fit tabular data");
    }
  }
  validate_responses(p.likelihood, p.data.y);
  if (config.eval_grid) {
    if (config.eval_grid->dim() != p.data.input_dim()) throw DataError("eval grid has wrong dimension");
    p.eval_grid = scale_grid(*config.eval_grid);
  }
  return p;
}

std::vector<UnitSpec> plan_units(const ExperimentConfig& config, const std::filesystem::path& root) {
  std::vector<UnitSpec> units;
  const int reps = config.split ? config.split->repetitions : 1;
  for (auto strategy : config.inducing.strategies) {
    for (int m : config.inducing.counts) {
      for (int r = 0; r < reps; ++r) {
        UnitSpec u;
        u.repetition = r;
        u.num_inducing = m;
        u.strategy = strategy;
        u.dir = root / (std::string(strategy_name(strategy)) + "_M" + std::to_string(m)) /
                ("split_" + std::to_string(r));
        units.push_back(u);
      }
    }
  }
  return units;
}

Eigen::MatrixXd initial_inducing(const Eigen::MatrixXd& X, int M, InducingPlacement placement,
                                 const std::optional<GridSpec>& bounds, std::uint64_t seed) {
  if (placement == InducingPlacement::Kmeans) return kmeans_init(X, M, seed);
  const Eigen::Index D = X.cols();
  const auto per_dim = static_cast<int>(std::lround(std::pow(static_cast<double>(M), 1.0 / static_cast<double>(D))));
  Eigen::Index total = 1;
  for (Eigen::Index d = 0; d < D; ++d) total *= per_dim;
  if (total != M) {
    throw std::invalid_argument("grid placement needs M to be a perfect power of the input dimension");
  }
  GridSpec lattice;
  if (bounds) {
    lattice.lower = bounds->lower;
    lattice.upper = bounds->upper;
  } else {
    lattice.lower = X.colwise().minCoeff().transpose();
    lattice.upper = X.colwise().maxCoeff().transpose();
  }
  lattice.bins.assign(static_cast<std::size_t>(D), per_dim);
  return lattice.centers();
}

WhitenedState init_from_approx(const GaussianApprox& approx, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  WhitenedState s;
  s.v = approx.m;
  for (int p = 0; p < approx.num_latent(); ++p) {
    Eigen::VectorXd z(approx.num_inducing());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    s.v.col(p) += approx.L[static_cast<std::size_t>(p)].triangularView<Eigen::Lower>() * z;
  }
  s.theta = approx.theta;
  return s;
}

UnitRunner::UnitRunner(const ExperimentConfig& config, const PreparedData& prepared, UnitSpec unit)
    : config_(config), prepared_(prepared), unit_(std::move(unit)) {
  if (config_.split && prepared_.grid) {
    const Eigen::MatrixXd& events = prepared_.events;
    const Split s = random_split(events.rows(), config_.split->test_fraction,
                                 config_.split->seed + static_cast<std::uint64_t>(unit_.repetition));
    auto binned = [&](const std::vector<Eigen::Index>& rows) {
      Eigen::MatrixXd part(static_cast<Eigen::Index>(rows.size()), events.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) part.row(static_cast<Eigen::Index>(i)) = events.row(rows[i]);
      return bin_events(part, *prepared_.grid).data;
    };
    train_ = binned(s.train);
    test_ = binned(s.test);
    has_split_ = true;
  } else if (config_.split) {
    const Split s = random_split(prepared_.data.size(), config_.split->test_fraction,
                                 config_.split->seed + static_cast<std::uint64_t>(unit_.repetition));
    train_ = prepared_.data.subset(s.train);
    test_ = prepared_.data.subset(s.test);
    has_split_ = true;
  } else {
    train_ = prepared_.data;
  }
}

std::uint64_t UnitRunner::seed(std::uint64_t stream) const {
  return config_.seed + 1000003ULL * static_cast<std::uint64_t>(unit_.repetition) + 7919ULL * stream;
}

ModelSpec UnitRunner::base_model() const {
  ModelSpec m;
  m.data = train_;
  m.kernel_kind = config_.kernel;
  m.likelihood = prepared_.likelihood;
  m.priors = config_.priors;
  m.nugget = config_.nugget;
  return m;
}

ModelSpec UnitRunner::model_from_checkpoint() const {
  ModelSpec m = base_model();
  const GaussianApprox q = read_checkpoint(unit_.dir / "checkpoint.txt");
  m.Z = q.Z;
  return m;
}

void UnitRunner::fit_vb() {
  try {
    std::filesystem::create_directories(unit_.dir);
    ModelSpec model = base_model();
    const int M = std::min<int>(unit_.num_inducing, static_cast<int>(train_.size()));
    model.Z = initial_inducing(train_.X, M, config_.inducing.placement, prepared_.grid, seed(1));
    KernelParams k;
    const Eigen::Index D = train_.input_dim();
    if (config_.kernel == KernelKind::Rbf) {
      k = KernelParams::rbf(config_.initial_variance, config_.initial_lengthscales.front());
    } else {
      Eigen::VectorXd ls(D);
      for (Eigen::Index d = 0; d < D; ++d) {
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(d), config_.initial_lengthscales.size() - 1);
        ls(d) = config_.initial_lengthscales[i];
      }
      k = KernelParams::ard(config_.initial_variance, ls);
    }
    if (!model.priors.empty() && static_cast<Eigen::Index>(model.priors.size()) != model.num_theta()) {
      throw ConfigError("config gives " + std::to_string(model.priors.size()) + " priors for " +
                        std::to_string(model.num_theta()) + " hyperparameters");
    }
    model.validate();
    VbConfig vc = config_.vb;
    vc.seed = config_.vb.seed + static_cast<std::uint64_t>(unit_.repetition);
    vc.optimize_z = unit_.strategy == InducingStrategy::VbOptimized;
    const VbFit f = fit(model, model.make_theta(k), vc);
    write_checkpoint(unit_.dir / "checkpoint.txt", f.approx);
    write_json(unit_.dir / "vb.json", json{{"elbo", f.elbo},
                                           {"phase_a_elbo", f.phase_a_elbo},
                                           {"iterations", f.iterations},
                                           {"theta", theta_json(f.approx.theta)},
                                           {"theta_names", model.theta_names()},
                                           {"trace", f.trace}});
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Vb, e.what());
  }
}

void UnitRunner::tune() {
  try {
    const GaussianApprox approx = read_checkpoint(unit_.dir / "checkpoint.txt");
    const ModelSpec model = model_from_checkpoint();
    json out;
    if (config_.sampler.step_size) {
      out = {{"fixed", true},
             {"best", {{"step_size", *config_.sampler.step_size}, {"max_leapfrog", *config_.sampler.max_leapfrog}}},
             {"candidates", json::array()}};
    } else {
      TuneConfig tc = config_.tune;
      tc.seed = config_.tune.seed + static_cast<std::uint64_t>(unit_.repetition);
      const WhitenedState init = init_from_approx(approx, seed(2));
      const TuneReport r = vsgp::tune(make_target(model), pack(init), tc, sampler_base(config_));
      json cands = json::array();
      for (const auto& c : r.candidates) {
        cands.push_back({{"step_size", c.step_size},
                         {"max_leapfrog", c.max_leapfrog},
                         {"esjd", std::isfinite(c.esjd) ? json(c.esjd) : json(nullptr)},
                         {"score", std::isfinite(c.score) ? json(c.score) : json(nullptr)},
                         {"acceptance", c.acceptance}});
      }
      out = {{"fixed", false},
             {"best", {{"step_size", r.best.step_size}, {"max_leapfrog", r.best.max_leapfrog}}},
             {"candidates", cands}};
    }
    write_json(unit_.dir / "tuning.json", out);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Tune, e.what());
  }
}

void UnitRunner::sample() {
  try {
    const GaussianApprox approx = read_checkpoint(unit_.dir / "checkpoint.txt");
    const ModelSpec model = model_from_checkpoint();
    const json tuning = read_json(unit_.dir / "tuning.json", Stage::Sample);
    HmcConfig base = sampler_base(config_);
    base.step_size = tuning.at("best").at("step_size").get<double>();
    base.max_leapfrog = tuning.at("best").at("max_leapfrog").get<int>();
    const LogDensity target = make_target(model);
    const auto names = coordinate_names(model);
    parallel_for(config_.sampler.chains, [&](int c) {
      HmcConfig h = base;
      h.seed = seed(200 + static_cast<std::uint64_t>(c));
      const WhitenedState init = init_from_approx(approx, seed(100 + static_cast<std::uint64_t>(c)));
      const Chain chain = hmc_run(target, pack(init), h);
      write_chain(unit_.dir / ("chain_hmc_" + std::to_string(c) + ".txt"), chain, names);
    });
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Sample, e.what());
  }
}

void UnitRunner::gibbs() {
  try {
    const GaussianApprox approx = read_checkpoint(unit_.dir / "checkpoint.txt");
    const ModelSpec model = model_from_checkpoint();
    GibbsConfig base;
    base.iterations = config_.sampler.iterations;
    base.burn_in = config_.sampler.burn_in;
    base.v_sampler = sampler_base(config_);
    TuneConfig tc = config_.tune;
    tc.seed = config_.tune.seed + static_cast<std::uint64_t>(unit_.repetition);
    const WhitenedState tune_init = init_from_approx(approx, seed(3));
    const GibbsTuneReport r = tune_gibbs(model, tune_init, tc, base);
    write_json(unit_.dir / "tuning_gibbs.json",
               json{{"v_step_size", r.best.v_sampler.step_size},
                    {"v_max_leapfrog", r.best.v_sampler.max_leapfrog},
                    {"theta_step", r.best.theta_step}});
    const auto names = coordinate_names(model);
    parallel_for(config_.sampler.chains, [&](int c) {
      GibbsConfig g = r.best;
      g.seed = seed(300 + static_cast<std::uint64_t>(c));
      const WhitenedState init = init_from_approx(approx, seed(100 + static_cast<std::uint64_t>(c)));
      const Chain chain = gibbs_run(model, init, g);
      write_chain(unit_.dir / ("chain_gibbs_" + std::to_string(c) + ".txt"), chain, names);
    });
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Sample, e.what());
  }
}

void UnitRunner::predict() {
  try {
    const GaussianApprox approx = read_checkpoint(unit_.dir / "checkpoint.txt");
    const ModelSpec model = model_from_checkpoint();
    const Task task = task_of(model.likelihood);
    const bool counts = task == Task::Count;

    std::map<std::string, TestSet> sets;
    const std::string scored = has_split_ ? "test" : "train";
    sets[scored] = has_split_ ? TestSet{test_.X, test_.y, {}} : TestSet{train_.X, train_.y, {}};
    if (counts) sets["bins"] = TestSet{prepared_.data.X, {}, {}};
    if (prepared_.eval_grid) sets["eval"] = TestSet{prepared_.eval_grid->centers(), {}, {}};

    json metrics;
    metrics["unit"] = {{"repetition", unit_.repetition},
                       {"num_inducing", approx.num_inducing()},
                       {"strategy", strategy_name(unit_.strategy)}};
    metrics["theta_names"] = model.theta_names();
    metrics["vb_theta"] = theta_json(approx.theta);
    metrics["split"] = {{"train", train_.size()}, {"test", test_.size()}};

    auto rate_bands = [&](const std::string& method, const Prediction& p) {
      const double volume = prepared_.original_cell_volume;
      const Eigen::MatrixXd X = prepared_.to_original(sets["bins"].X);
      Table t;
      for (Eigen::Index d = 0; d < X.cols(); ++d) t.columns.push_back("x" + std::to_string(d));
      for (const char* c : {"mean", "median", "q025", "q975"}) t.columns.emplace_back(c);
      t.values.resize(X.rows(), X.cols() + 4);
      t.values.leftCols(X.cols()) = X;
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        t.values(i, X.cols()) = p.response(i, 0) / volume;
        if (p.sample_response.rows() > 0) {
          std::vector<double> col(p.sample_response.col(i).data(),
                                  p.sample_response.col(i).data() + p.sample_response.rows());
          t.values(i, X.cols() + 1) = quantile(col, 0.5) / volume;
          t.values(i, X.cols() + 2) = quantile(col, 0.025) / volume;
          t.values(i, X.cols() + 3) = quantile(col, 0.975) / volume;
        } else {
          // Lognormal quantiles of the Gaussian predictive for the VB method.
          const double mu = p.mean(i, 0);
          const double sd = std::sqrt(p.variance(i, 0));
          const double e = p.response(i, 0) / std::exp(mu + 0.5 * p.variance(i, 0));
          t.values(i, X.cols() + 1) = e * std::exp(mu) / volume;
          t.values(i, X.cols() + 2) = e * std::exp(mu - 1.959963984540054 * sd) / volume;
          t.values(i, X.cols() + 3) = e * std::exp(mu + 1.959963984540054 * sd) / volume;
        }
      }
      write_table(unit_.dir / ("rate_bands_" + method + ".txt"), t);
    };

    for (const auto& [name, set] : sets) {
      const Prediction p = predict_vb(approx, model, set);
      const Eigen::MatrixXd coords = prepared_.to_original(set.X);
      write_prediction(unit_.dir / ("predictions_vb_" + name + ".txt"), p, &coords);
      if (name == scored) metrics["vb"] = metrics_json(score(p, set.y, task));
      if (name == "bins") rate_bands("vb", p);
    }
    for (const std::string sampler : {"hmc", "gibbs"}) {
      const auto chains = load_chains(unit_.dir, sampler);
      if (chains.empty()) continue;
      const Chain pooled = pool(chains);
      const Eigen::VectorXd theta_mean =
          pooled.states.rightCols(model.num_theta()).colwise().mean().transpose();
      metrics[sampler + "_theta_mean"] = theta_json(theta_mean);
      double accept = 0.0;
      for (const auto& c : chains) accept += c.acceptance_rate();
      metrics[sampler + "_acceptance"] = accept / static_cast<double>(chains.size());
      for (const auto& [name, set] : sets) {
        const Prediction p = predict_chain(pooled, model, set, name == "bins");
        const Eigen::MatrixXd coords = prepared_.to_original(set.X);
        write_prediction(unit_.dir / ("predictions_" + sampler + "_" + name + ".txt"), p, &coords);
        if (name == scored) {
          metrics[sampler] = metrics_json(score(p, set.y, task));
          metrics[sampler + "_samples_skipped"] = p.samples_skipped;
        }
        if (name == "bins") rate_bands(sampler, p);
      }
    }
    write_json(unit_.dir / "metrics.json", metrics);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Predict, e.what());
  }
}

void UnitRunner::diagnose() {
  try {
    const ModelSpec model = model_from_checkpoint();
    const auto names = coordinate_names(model);
    json out = json::object();
    for (const std::string sampler : {"hmc", "gibbs"}) {
      const auto chains = load_chains(unit_.dir, sampler);
      if (chains.empty()) continue;
      json s;
      const EssResult e = ess(chains.front().states);
      s["ess"] = std::vector<double>(e.ess.data(), e.ess.data() + e.ess.size());
      s["min_ess"] = e.min();
      s["wall_clock_seconds"] = chains.front().wall_clock_seconds;
      if (chains.front().wall_clock_seconds > 0.0) {
        const TnEss tn = tn_ess(e, chains.front().wall_clock_seconds);
        s["tn_ess"] = tn.min_per_second;
      }
      s["acceptance"] = chains.front().acceptance_rate();
      if (sampler == "gibbs") s["theta_acceptance"] = chains.front().theta_acceptance_rate();
      s["chains"] = chains.size();
      if (chains.size() >= 2) {
        std::vector<Eigen::MatrixXd> draws;
        for (const auto& c : chains) draws.push_back(c.states);
        const PsrfResult r = psrf(draws, config_.sampler.split_psrf);
        s["psrf"] = std::vector<double>(r.psrf.data(), r.psrf.data() + r.psrf.size());
        s["max_psrf"] = r.psrf.maxCoeff();
        const auto worst = least_efficient(e, 20);
        const Eigen::MatrixXd evo = psrf_evolution(draws, config_.sampler.psrf_points, config_.sampler.split_psrf);
        Table t;
        t.columns = {"prefix", "parameter", "psrf"};
        t.values.resize(evo.rows() * static_cast<Eigen::Index>(worst.size()), 3);
        Eigen::Index row = 0;
        for (Eigen::Index i = 0; i < evo.rows(); ++i) {
          for (Eigen::Index q : worst) {
            t.values.row(row++) << evo(i, 0), static_cast<double>(q), evo(i, q + 1);
          }
        }
        write_table(unit_.dir / ("psrf_" + sampler + ".txt"), t);
        json worst_names = json::array();
        for (Eigen::Index q : worst) worst_names.push_back(names[static_cast<std::size_t>(q)]);
        s["least_efficient"] = worst_names;
      }
      out[sampler] = s;
    }
    out["parameter_names"] = names;
    write_json(unit_.dir / "diagnostics.json", out);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Diagnose, e.what());
  }
}

void UnitRunner::run_all() {
  fit_vb();
  tune();
  sample();
  if (config_.sampler.gibbs) gibbs();
  predict();
  diagnose();
}

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / "run.lock") {
  std::filesystem::create_directories(dir);
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path_.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    throw std::runtime_error("run directory is locked: " + path_.string());
  }
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
  ::close(fd_);
}

std::filesystem::path run_pipeline(const ExperimentConfig& config, std::optional<std::filesystem::path> root) {
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Config, e.what());
  }
  const std::filesystem::path dir = root.value_or(config.output);
  std::unique_ptr<RunLock> lock;
  try {
    lock = std::make_unique<RunLock>(dir);
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Config, e.what());
  }
  write_atomically(dir / "config.json", config_to_json(config));
  PreparedData prepared;
  try {
    prepared = prepare_data(config);
  } catch (const std::exception& e) {
    throw PipelineError(Stage::Data, e.what());
  }

  const std::vector<UnitSpec> units = plan_units(config, dir);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = std::max(1, static_cast<int>(hw) / config.sampler.chains);
  std::atomic<std::size_t> next{0};
  parallel_for(std::min<int>(workers, static_cast<int>(units.size())), [&](int) {
    for (std::size_t i = next++; i < units.size(); i = next++) {
      UnitRunner(config, prepared, units[i]).run_all();
    }
  });

  json summary;
  summary["name"] = config.name;
  summary["units"] = json::array();
  std::map<std::pair<std::string, int>, std::vector<json>> groups;
  for (const auto& u : units) {
    json m = read_json(u.dir / "metrics.json", Stage::Predict);
    m["dir"] = std::filesystem::relative(u.dir, dir).generic_string();
    groups[{strategy_name(u.strategy), u.num_inducing}].push_back(m);
    summary["units"].push_back(m);
  }
  summary["groups"] = json::array();
  for (const auto& [key, ms] : groups) {
    json g{{"strategy", key.first}, {"num_inducing", key.second}, {"units", ms.size()}};
    for (const std::string method : {"vb", "hmc", "gibbs"}) {
      double total = 0.0;
      std::size_t n = 0;
      for (const auto& m : ms) {
        if (m.contains(method)) {
          total += m[method]["mean_log_density"].get<double>();
          ++n;
        }
      }
      if (n > 0) g[method + "_mean_log_density"] = total / static_cast<double>(n);
    }
    int better = 0;
    for (const auto& m : ms) {
      if (m.contains("hmc") && m["hmc"]["mean_log_density"].get<double>() >= m["vb"]["mean_log_density"].get<double>()) {
        ++better;
      }
    }
    g["hmc_at_least_vb"] = better;
    summary["groups"].push_back(g);
  }
  write_json(dir / "metrics.json", summary);
  return dir;
}

}  // namespace vsgp
