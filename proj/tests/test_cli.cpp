#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "vsgp/config.hpp"
#include "vsgp/data.hpp"
#include "vsgp/io.hpp"
#include "vsgp/pipeline.hpp"

using namespace vsgp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vsgp_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Comment lines of chain files carry wall-clock metadata.
std::string without_comments(const fs::path& p) {
  std::ifstream in(p);
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind('#', 0) != 0) out += line + '\n';
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

GridSpec unit_grid(int bins) {
  GridSpec g;
  g.lower = Eigen::VectorXd::Zero(1);
  g.upper = Eigen::VectorXd::Ones(1);
  g.bins = {bins};
  return g;
}

// Small regression problem that runs every stage in a few seconds.
fs::path tiny_experiment(const fs::path& dir) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::normal_distribution<double> n(0.0, 0.2);
  std::ofstream table(dir / "tiny.csv");
  table << "x,y\n";
  for (int i = 0; i < 24; ++i) {
    const double x = u(rng);
    table << x << ',' << std::sin(2.0 * x) + n(rng) << '\n';
  }
  table.close();
  write_text(dir / "tiny.json", R"({"name":"tiny","seed":5,
    "dataset":{"source":"table","path":"tiny.csv"},
    "likelihood":{"family":"gaussian","noise_variance":0.04},
    "inducing":{"counts":[4],"strategies":["vb-optimized"]},
    "split":{"test_fraction":0.25,"seed":2,"repetitions":1},
    "vb":{"phase_a_iterations":20,"max_iterations":60},
    "tune":{"candidates":3,"samples_per_candidate":5},
    "sampler":{"iterations":60,"burn_in":10,"chains":2,"gibbs":true,"psrf_points":5},
    "output":"runs"})");
  return dir / "tiny.json";
}

int run_cli(const std::string& args) {
  const char* exe = std::getenv("VSGP_BINARY");
  REQUIRE(exe != nullptr);
  const int status = std::system((std::string(exe) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("binning conserves events inside the grid") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  Eigen::MatrixXd events(500, 1);
  for (Eigen::Index i = 0; i < events.rows(); ++i) events(i, 0) = u(rng);
  const BinnedEvents b = bin_events(events, unit_grid(10));
  const auto inside = (events.array() >= 0.0 && events.array() <= 1.0).count();
  CHECK(b.data.y.sum() == doctest::Approx(static_cast<double>(inside)));
  CHECK(b.outside == events.rows() - inside);
  CHECK(b.bin_measure == doctest::Approx(0.1));
  CHECK(b.data.X(0, 0) == doctest::Approx(0.05));

  Eigen::MatrixXd one(1, 1);
  one << 1.0;
  const BinnedEvents last = bin_events(one, unit_grid(4));
  CHECK(last.data.y.sum() == 1.0);
  CHECK(last.data.y(3) == 1.0);
}

TEST_CASE("two-dimensional binning orders cells with the first dimension slowest") {
  GridSpec g;
  g.lower = Eigen::Vector2d(0, 0);
  g.upper = Eigen::Vector2d(2, 3);
  g.bins = {2, 3};
  Eigen::MatrixXd e(2, 2);
  e << 0.5, 2.5, 1.5, 0.5;
  const BinnedEvents b = bin_events(e, g);
  REQUIRE(b.data.y.size() == 6);
  CHECK(b.data.y(2) == 1.0);
  CHECK(b.data.y(3) == 1.0);
  CHECK(b.data.y.sum() == 2.0);
  CHECK(b.bin_measure == doctest::Approx(1.0));
}

TEST_CASE("toy multiclass generator") {
  const Dataset a = make_toy_multiclass(4);
  CHECK(a.size() == 750);
  CHECK(a.input_dim() == 2);
  for (int k = 0; k < 3; ++k) CHECK((a.y.array() == k).count() == 250);
  CHECK(a.X == make_toy_multiclass(4).X);
  CHECK(a.X != make_toy_multiclass(5).X);
  CHECK(a.X.topRows(250).col(0).mean() == doctest::Approx(-1.0).epsilon(0.15));
}

TEST_CASE("synthetic pines are deterministic points in the unit square") {
  const Eigen::MatrixXd p = make_synthetic_pines(7);
  CHECK(p.rows() > 50);
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);
  CHECK(p == make_synthetic_pines(7));
}

TEST_CASE("random split is a sorted partition") {
  const Split s = random_split(101, 0.3, 9);
  CHECK(s.test.size() == 30);
  CHECK(s.train.size() == 71);
  std::vector<Eigen::Index> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (Eigen::Index i = 0; i < 101; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));
  CHECK(random_split(101, 0.3, 9).test == s.test);
  CHECK(random_split(101, 0.3, 10).test != s.test);
}

TEST_CASE("configuration parsing and validation") {
  const ExperimentConfig c = parse_config(R"({"name":"x","dataset":{"source":"toy-multiclass","seed":3},
      "likelihood":{"family":"robustmax","num_classes":3},"nugget":0.1})");
  CHECK(c.name == "x");
  CHECK(c.nugget == 0.1);
  CHECK(c.likelihood.num_classes == 3);
  CHECK(c.dataset.source == DataSource::ToyMulticlass);
  CHECK_NOTHROW(c.validate());

  const ExperimentConfig back = parse_config(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_AS(parse_config(R"({"bogus":1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"vb":{"max_iterations":10,"typo":2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"nugget":-0.5})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"likelihood":{"family":"cauchy"}})").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"dataset":{"source":"toy-multiclass"},"split":{"test_fraction":1.5}})").validate(),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"dataset":{"source":"events","path":"/nonexistent/file"}})").validate(),
                  ConfigError);
}

TEST_CASE("table and prediction files round trip") {
  const fs::path dir = scratch("io");
  Table t;
  t.columns = {"a", "b"};
  t.values.resize(3, 2);
  t.values << 1.0 / 3.0, -2e-300, 1e300, 0.0, -7.25, 4.0;
  write_table(dir / "t.txt", t);
  const Table back = read_table(dir / "t.txt");
  CHECK(back.columns == t.columns);
  CHECK(back.values == t.values);
  CHECK(back.column("b") == 1);
  CHECK_THROWS(back.column("c"));

  Prediction p;
  p.mean = Eigen::MatrixXd::Constant(2, 1, 0.5);
  p.variance = Eigen::MatrixXd::Constant(2, 1, 0.25);
  p.log_density = Eigen::Vector2d(-1.0, -2.0);
  const Eigen::MatrixXd coords = Eigen::Vector2d(10.0, 20.0);
  write_prediction(dir / "p.txt", p, &coords);
  const Table pt = read_table(dir / "p.txt");
  CHECK(pt.values(1, pt.column("x0")) == 20.0);
  CHECK(pt.values(0, pt.column("var_0")) == 0.25);
  CHECK(pt.values(1, pt.column("log_density")) == -2.0);

  write_text(dir / "bad.txt", "a b\n1 2\n3\n");
  CHECK_THROWS_AS(read_table(dir / "bad.txt"), FormatError);
}

TEST_CASE("pipeline reruns reproduce metrics byte for byte") {
  const fs::path dir = scratch("rerun");
  ExperimentConfig c = load_config(tiny_experiment(dir));
  const fs::path a = run_pipeline(c, dir / "a");
  const fs::path b = run_pipeline(c, dir / "b");
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  const fs::path unit = "vb-optimized_M4/split_0";
  for (const std::string f : {"metrics.json", "checkpoint.txt", "chain_hmc_0.txt", "chain_gibbs_1.txt", "psrf_hmc.txt"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / unit / f));
    CHECK(without_comments(a / unit / f) == without_comments(b / unit / f));
  }
  CHECK(slurp(a / unit / "metrics.json") == slurp(b / unit / "metrics.json"));
  CHECK(slurp(a / unit / "metrics.json").find("seconds") == std::string::npos);

  emit_plot_data(a);
  CHECK(fs::exists(a / "plots" / "log_predictive_density.txt"));
  CHECK(fs::exists(a / "plots" / "psrf_gibbs_vb-optimized_M4_split_0.txt"));
}

TEST_CASE("plot emission refuses incomplete runs without partial output") {
  const fs::path dir = scratch("emit");
  ExperimentConfig c = load_config(tiny_experiment(dir));
  const fs::path run = run_pipeline(c, dir / "run");
  const fs::path chain = run / "vb-optimized_M4/split_0/chain_hmc_0.txt";
  std::string header;
  {
    std::ifstream in(chain);
    for (std::string line; std::getline(in, line);) {
      header += line + '\n';
      if (line.rfind("iteration", 0) == 0) break;
    }
  }
  write_text(chain, header);
  CHECK_THROWS_AS(emit_plot_data(run), PipelineError);
  CHECK_FALSE(fs::exists(run / "plots"));
  CHECK_THROWS_AS(emit_plot_data(dir / "missing"), PipelineError);
}

TEST_CASE("a held lock rejects a second owner") {
  const fs::path dir = scratch("lock");
  RunLock first(dir);
  CHECK_THROWS(RunLock(dir));
}

TEST_CASE("a lock file left by a dead owner does not block") {
  const fs::path dir = scratch("stale_lock");
  write_text(dir / "run.lock", "");
  CHECK_NOTHROW(RunLock{dir});
  { RunLock again(dir); }
  CHECK_FALSE(fs::exists(dir / "run.lock"));
}

TEST_CASE("CLI stages and exit codes") {
  const fs::path dir = scratch("exit");
  const fs::path cfg = tiny_experiment(dir);
  const std::string out = " -o " + (dir / "out").string();
  CHECK(run_cli("fit-vb -c " + cfg.string() + out) == 0);
  CHECK(run_cli("tune -c " + cfg.string() + out) == 0);
  CHECK(run_cli("sample -c " + cfg.string() + out) == 0);
  CHECK(run_cli("predict -c " + cfg.string() + out) == 0);
  CHECK(run_cli("diagnose -c " + cfg.string() + out) == 0);
  CHECK(fs::exists(dir / "out/vb-optimized_M4/split_0/diagnostics.json"));

  write_text(dir / "broken.json", "{\"bogus\": true}");
  CHECK(run_cli("fit-vb -c " + (dir / "broken.json").string()) == static_cast<int>(Stage::Config));

  write_text(dir / "garbage.csv", "x,y\n1,2\nthree,4\n");
  write_text(dir / "garbage.json", R"({"dataset":{"source":"table","path":"garbage.csv"},"output":"runs"})");
  CHECK(run_cli("fit-vb -c " + (dir / "garbage.json").string()) == static_cast<int>(Stage::Data));

  CHECK(run_cli("tune -c " + cfg.string() + " -o " + (dir / "empty").string()) == static_cast<int>(Stage::Tune));
  fs::create_directories(dir / "nothing");
  CHECK(run_cli("emit-plots " + (dir / "nothing").string()) == static_cast<int>(Stage::Emit));
}

TEST_CASE("committed configurations parse") {
  const char* src = std::getenv("VSGP_SOURCE_DIR");
  REQUIRE(src != nullptr);
  for (const auto& entry : fs::directory_iterator(fs::path(src) / "configs")) {
    if (!entry.is_regular_file()) continue;
    CAPTURE(entry.path().string());
    ExperimentConfig c;
    CHECK_NOTHROW(c = load_config(entry.path()));
    CHECK_NOTHROW(c.validate());
  }
  for (const auto& entry : fs::directory_iterator(fs::path(src) / "configs" / "templates")) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path()));
  }
}
