#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "cadm/checkpoint.hpp"
#include "cadm/config.hpp"
#include "cadm/io.hpp"
#include "support.hpp"

using namespace cadm;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("cadm_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CADM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ptrdiff_t count_matches(const std::string& text, const std::string& pattern) {
  const std::regex re(pattern);
  return std::distance(std::sregex_iterator(text.begin(), text.end(), re), std::sregex_iterator());
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kTinyConfig = R"({
  "env": "pendulum", "dynamics_hidden": [64, 64, 64, 64], "encoder_hidden": [16, 16, 16],
  "n_iterations": 3, "trajectories_per_iteration": 2, "epochs_per_iteration": 2,
  "batch_size": 64, "K": 4, "M": 3, "horizon": 4, "n_candidates": 16
})";

/// Trains the tiny config once per process and returns its directory.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path cfg = write_file("tiny.json", kTinyConfig);
    const fs::path out = workdir() / "run_a";
    EXPECT_EQ(run("train " + cfg.string() + " --out " + out.string() + " --seed 3"), 0);
    return out;
  }();
  return dir;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const config::RunConfig d = config::parse_text("{}");
  EXPECT_EQ(d.train.n_iterations, 20);
  EXPECT_EQ(d.train.trajectories_per_iteration, 10);
  EXPECT_EQ(d.train.epochs_per_iteration, 5);
  EXPECT_EQ(d.train.batch_size, 128);
  EXPECT_EQ(d.train.lr, 1e-3);
  EXPECT_EQ(d.train.model.history_k, 10);
  EXPECT_EQ(d.train.future_m, 10);
  EXPECT_EQ(d.train.beta, 0.5);
  EXPECT_EQ(d.train.plan.horizon, 30);
  EXPECT_EQ(d.train.plan.n_candidates, 1000);
  EXPECT_EQ(d.train.model.dynamics_hidden, (std::vector<int>{200, 200, 200, 200}));
  const config::RunConfig o = config::parse_text(R"({"env":"pendulum","plan_method":"cem","beta":1.0,"K":5})");
  EXPECT_EQ(o.train.model.env, envs::EnvId::pendulum);
  EXPECT_EQ(o.train.plan.method, planner::Method::cem);
  EXPECT_EQ(o.train.model.history_k, 5);
}

TEST(Config, ErrorsNameTheKey) {
  auto key_of = [](const std::string& text) {
    try {
      config::parse_text(text);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(key_of(R"({"horizn": 3})"), "horizn");
  EXPECT_EQ(key_of(R"({"horizon": "long"})"), "horizon");
  EXPECT_EQ(key_of(R"({"env": "ant"})"), "env");
  EXPECT_EQ(key_of(R"({"elite_fraction": 0.9})"), "elite_fraction");
  EXPECT_EQ(key_of(R"({"dynamics_hidden": [64, 0]})"), "dynamics_hidden");
  EXPECT_EQ(key_of(R"({"plan_method": "cem"})"), "plan_method");
  EXPECT_THROW(config::parse_text("[1,2"), ConfigError);
  EXPECT_THROW(config::load((workdir() / "missing.json").string()), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto kind : {ModelKind::cadm, ModelKind::vanilla, ModelKind::stacked}) {
    ModelConfig mc;
    mc.env = envs::EnvId::cartpole;
    mc.kind = kind;
    mc.history_k = kind == ModelKind::vanilla ? 0 : 10;
    mc.dynamics_hidden = {32, 32};
    CadmModel m = CadmModel::create(mc, 11);
    Rng g(12);
    m.state_norm = {testkit::random_vector(4, g), testkit::random_vector(4, g, 0.1, 3.0)};
    m.delta_norm = {testkit::random_vector(4, g), testkit::random_vector(4, g, 0.1, 3.0)};
    const ckpt::Checkpoint c{m, {}, 10, 0.5, {7, 20, 180.5, 14}};
    const fs::path p = workdir() / ("rt_" + std::string(to_string(kind)) + ".ckpt");
    ckpt::save(p.string(), c);
    const ckpt::Checkpoint back = ckpt::load(p.string());
    EXPECT_EQ(back.meta.seed, 7u);
    EXPECT_EQ(back.meta.best_return, 180.5);
    EXPECT_EQ(back.plan, c.plan);
    EXPECT_EQ(kind == ModelKind::cadm, slurp(p).find("\"encoder\"") != std::string::npos);
    for (int i = 0; i < 100; ++i) {
      const Vector s = testkit::random_vector(4, g, -3, 3);
      const Vector a = Vector::Constant(1, static_cast<double>(i % 2));
      const Vector ctx = testkit::random_vector(mc.context_dim(), g, -2, 2);
      ASSERT_EQ(forward_predict(m, s, a, ctx), forward_predict(back.model, s, a, ctx));
    }
    EXPECT_EQ(ckpt::serialize(back), ckpt::serialize(c));
  }
}

TEST(Checkpoint, RejectsBadDocuments) {
  EXPECT_THROW(ckpt::deserialize("not json"), DataError);
  EXPECT_THROW(ckpt::deserialize(R"({"format":"cadm-checkpoint","version":99})"), DataError);
  ModelConfig mc;
  mc.dynamics_hidden = {8};
  const std::string text = ckpt::serialize({CadmModel::create(mc, 1), {}, 10, 0.5, {}});
  nlohmann::json j = nlohmann::json::parse(text);
  j["hyperparameters"]["K"] = 3;
  EXPECT_THROW(ckpt::deserialize(j.dump()), DataError);
}

TEST(Csv, FormatAndParse) {
  EXPECT_EQ(io::fmt(0.1), "0.1");
  EXPECT_EQ(std::stod(io::fmt(1.0 / 3.0)), 1.0 / 3.0);
  std::istringstream ok("a,b\n1,2\n3,4\n");
  const io::CsvTable t = io::read_csv(ok);
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.numeric_column(1), (std::vector<double>{2, 4}));
  std::istringstream ragged("a,b\n1,2,3\n");
  EXPECT_THROW(io::read_csv(ragged), DataError);
  std::istringstream text("a,b\n1,x\n");
  const io::CsvTable tt = io::read_csv(text);
  EXPECT_THROW(tt.numeric_column(1), DataError);
  std::istringstream empty("");
  EXPECT_THROW(io::read_csv(empty), DataError);
}

TEST(Cli, ExitCodeContract) {
  const fs::path cfg = write_file("ok.json", kTinyConfig);
  const fs::path bad_key = write_file("bad_key.json", R"({"env":"pendulum","n_iteratons":3})");
  const fs::path bad_json = write_file("bad.json", "{");
  const fs::path bad_csv = write_file("bad.csv", "a,b\n1\n");
  const fs::path text_csv = write_file("text.csv", "a,b\n1,hello\n");
  const struct {
    std::string args;
    int code;
  } cases[] = {
      {"", 2},
      {"frobnicate", 2},
      {"train", 2},
      {"train " + (workdir() / "nope.json").string(), 2},
      {"train " + bad_key.string(), 2},
      {"train " + bad_json.string(), 2},
      {"baseline " + cfg.string() + " --kind cadm", 2},
      {"baseline " + cfg.string() + " --kind fancy", 2},
      {"eval " + (workdir() / "nope.ckpt").string() + " --env pendulum", 2},
      {"plot " + bad_csv.string(), 2},
      {"plot " + text_csv.string(), 2},
      {"plot " + (workdir() / "nope.csv").string(), 2},
      {"--help", 0},
  };
  for (const auto& c : cases) EXPECT_EQ(run(c.args), c.code) << c.args;
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
  const fs::path& a = trained_run();
  ASSERT_TRUE(fs::exists(a / "final.ckpt"));
  ASSERT_TRUE(fs::exists(a / "best.ckpt"));
  std::ifstream in(a / "metrics.csv");
  const io::CsvTable t = io::read_csv(in);
  EXPECT_EQ(t.header, (std::vector<std::string>{"iteration", "dataset_size", "mean_loss", "mean_return"}));
  EXPECT_EQ(t.rows.size(), 3u);
  const fs::path b = workdir() / "run_b";
  ASSERT_EQ(run("train " + (workdir() / "tiny.json").string() + " --out " + b.string() + " --seed 3"), 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "final.ckpt"), slurp(b / "final.ckpt"));
  // best.ckpt records a return at least as good as the final row
  const ckpt::Checkpoint best = ckpt::load((a / "best.ckpt").string());
  for (double r : t.numeric_column(3)) EXPECT_GE(best.meta.best_return, r);
}

TEST(Cli, EvalSweepTraceLatentsPlot) {
  const fs::path& dir = trained_run();
  const std::string ck = (dir / "final.ckpt").string();
  const fs::path eval_csv = workdir() / "eval.csv";
  ASSERT_EQ(run("eval " + ck + " --env pendulum --regime moderate --episodes 5 --seed 1 --out " + eval_csv.string()), 0);
  {
    std::ifstream in(eval_csv);
    const io::CsvTable t = io::read_csv(in);
    EXPECT_EQ(t.header, (std::vector<std::string>{"env", "regime", "seed", "episode", "return"}));
    EXPECT_EQ(t.rows.size(), 5u);
    for (double r : t.numeric_column(4)) EXPECT_LE(r, 0.0);
  }
  EXPECT_EQ(run("eval " + ck + " --env cartpole"), 2);
  EXPECT_EQ(run("eval " + ck + " --env pendulum --regime hard"), 2);

  const fs::path sweep_csv = workdir() / "sweep.csv";
  ASSERT_EQ(run("sweep " + ck + " --param mass --grid 0.2,0.4,0.5,0.7,1.0,1.3,1.5,1.6,1.8 --rollouts 1 --out " +
                sweep_csv.string()),
            0);
  {
    std::ifstream in(sweep_csv);
    const io::CsvTable t = io::read_csv(in);
    EXPECT_EQ(t.header, (std::vector<std::string>{"param", "value", "mse", "n"}));
    EXPECT_EQ(t.rows.size(), 9u);
  }
  const fs::path svg = workdir() / "sweep.svg";
  ASSERT_EQ(run("plot " + sweep_csv.string() + " --x value --y mse --out " + svg.string()), 0);
  EXPECT_NE(slurp(svg).find("<polyline"), std::string::npos);

  const fs::path trace_csv = workdir() / "trace.csv";
  ASSERT_EQ(run("trace " + ck + " --params 1.3,0.7 --out " + trace_csv.string()), 0);
  {
    std::ifstream in(trace_csv);
    const io::CsvTable t = io::read_csv(in);
    EXPECT_EQ(t.header, (std::vector<std::string>{"t", "dim", "true", "predicted"}));
    EXPECT_EQ(t.rows.size(), 20u * 3u);
    EXPECT_EQ(t.rows[0][2], t.rows[0][3]);
  }

  const fs::path lat_csv = workdir() / "latents.csv";
  ASSERT_EQ(run("latents " + ck + " --param length --grid 0.8,1.2 --segments 25 --out " + lat_csv.string()), 0);
  {
    std::ifstream in(lat_csv);
    const io::CsvTable t = io::read_csv(in);
    EXPECT_EQ(t.header.size(), 13u);
    EXPECT_EQ(t.header[0], "param_value");
    EXPECT_EQ(t.header[12], "z9");
    EXPECT_EQ(t.rows.size(), 50u);
  }
  const fs::path pca_svg = workdir() / "pca.svg";
  ASSERT_EQ(run("plot " + lat_csv.string() + " --pca --out " + pca_svg.string()), 0);
  const std::string pca = slurp(pca_svg);
  EXPECT_EQ(count_matches(pca, "<circle"), 50);
}

TEST(Cli, SweepDefaultGridIsEveryRegimeValue) {
  const fs::path csv = workdir() / "sweep_default.csv";
  ASSERT_EQ(run("sweep " + (trained_run() / "final.ckpt").string() + " --param mass --rollouts 1 --out " + csv.string()), 0);
  std::ifstream in(csv);
  const io::CsvTable t = io::read_csv(in);
  std::vector<double> expected;
  for (auto r : {envs::Regime::train, envs::Regime::moderate, envs::Regime::extreme})
    for (double v : std::vector<double>(envs::param_grid(envs::EnvId::pendulum, r).axes[0])) expected.push_back(v);
  std::sort(expected.begin(), expected.end());
  expected.erase(std::unique(expected.begin(), expected.end()), expected.end());
  EXPECT_EQ(t.numeric_column(1), expected);
}

TEST(Cli, PlotTwoColumnCsvIsOnePolyline) {
  const fs::path csv = write_file("two.csv", "x,y\n0,1\n1,3\n2,2\n3,5\n");
  const fs::path svg = workdir() / "two.svg";
  ASSERT_EQ(run("plot " + csv.string() + " --out " + svg.string()), 0);
  const std::string s = slurp(svg);
  const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(s, m, poly));
  std::istringstream pts(m[1].str());
  int n = 0;
  for (std::string p; pts >> p;) ++n;
  EXPECT_EQ(n, 4);
  EXPECT_EQ(count_matches(s, "<polyline"), 1);
}

TEST(Cli, BaselineCheckpointsWorkWithEval) {
  const fs::path cfg = write_file("tiny_base.json", kTinyConfig);
  for (std::string kind : {"vanilla", "stacked"}) {
    const fs::path out = workdir() / ("base_" + kind);
    ASSERT_EQ(run("baseline --kind " + kind + " " + cfg.string() + " --out " + out.string()), 0);
    const std::string text = slurp(out / "final.ckpt");
    EXPECT_EQ(text.find("\"encoder\""), std::string::npos);
    const ckpt::Checkpoint c = ckpt::load((out / "final.ckpt").string());
    EXPECT_EQ(c.model.forward_net.spec.input_dim(), kind == "vanilla" ? 4 : 4 + 40);
    EXPECT_EQ(run("eval " + (out / "final.ckpt").string() + " --env pendulum --episodes 1"), 0);
  }
}
