// cadm: train, evaluate and inspect context-aware dynamics models.
//
// Exit codes: 0 success, 1 runtime fault, 2 usage or configuration error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cadm/checkpoint.hpp"
#include "cadm/config.hpp"
#include "cadm/errors.hpp"
#include "cadm/eval.hpp"
#include "cadm/io.hpp"
#include "cadm/trainer.hpp"

namespace fs = std::filesystem;
using namespace cadm;

namespace {

/// Bad input from the user side: missing files, malformed CSV, mismatched env.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ckpt::Checkpoint load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  try {
    return ckpt::load(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

io::CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return io::read_csv(in);
  } catch (const DataError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(flag, "not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(flag, "empty list");
  return out;
}

/// Writes to `path`, or stdout when empty.
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string kind;
};

int cmd_train(const TrainOpts& o) {
  config::RunConfig rc = config::load(o.config);
  if (!o.kind.empty()) {
    rc.train.model.kind = parse_model_kind(o.kind);
    if (rc.train.model.kind == ModelKind::cadm) throw ConfigError("kind", "baseline kind must be vanilla or stacked");
  }
  if (o.seed_set) rc.train.seed = o.seed;
  if (!o.out.empty()) rc.out_dir = o.out;
  rc.train.validate();
  fs::create_directories(rc.out_dir);
  const fs::path dir(rc.out_dir);

  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  io::write_metrics_header(metrics);
  metrics.flush();

  const TrainConfig& cfg = rc.train;
  auto on_iteration = [&](const TrainingResult& res, const CadmModel&) {
    const MetricsRow& row = res.metrics.back();
    io::write_metrics_row(metrics, row);
    metrics.flush();
    std::cerr << "iteration " << row.iteration << "/" << cfg.n_iterations << "  transitions " << row.dataset_size
              << "  loss " << io::fmt(row.mean_loss) << "  return " << io::fmt(row.mean_return) << "\n";
  };
  const TrainingResult res = run_training(cfg, on_iteration);
  ckpt::save((dir / "final.ckpt").string(), ckpt::from_training(res.final_model, cfg, res));
  ckpt::save((dir / "best.ckpt").string(), ckpt::from_training(res.best_model, cfg, res));
  return 0;
}

struct EvalOpts {
  std::string ckpt, env, regime = "train", out;
  int episodes = 5;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOpts& o) {
  const envs::EnvId env = envs::parse_env(o.env);
  const envs::Regime regime = envs::parse_regime(o.regime);
  const ckpt::Checkpoint c = load_checkpoint(o.ckpt);
  const eval::EvalReport rep = eval::evaluate_returns(c.model, env, regime, o.episodes, c.plan, o.seed);
  emit(o.out, [&](std::ostream& os) { io::write_eval(os, rep); });
  std::cerr << "mean " << io::fmt(rep.mean()) << "  std " << io::fmt(rep.stddev()) << "\n";
  return 0;
}

/// Union of every regime's values along `axis`, sorted.
std::vector<double> all_regime_values(envs::EnvId env, int axis) {
  std::set<double> vals;
  for (auto r : {envs::Regime::train, envs::Regime::moderate, envs::Regime::extreme}) {
    const envs::ParamGrid grid = envs::param_grid(env, r);
    vals.insert(grid.axes[axis].begin(), grid.axes[axis].end());
  }
  return {vals.begin(), vals.end()};
}

struct SweepOpts {
  std::string ckpt, param, grid, out;
  int rollouts = 3;
  std::uint64_t seed = 0;
};

int cmd_sweep(const SweepOpts& o) {
  const ckpt::Checkpoint c = load_checkpoint(o.ckpt);
  const int axis = envs::axis_index(c.model.env(), o.param);
  const std::vector<double> grid =
      o.grid.empty() ? all_regime_values(c.model.env(), axis) : parse_list(o.grid, "grid");
  const auto rows = eval::prediction_error_sweep(c.model, o.param, grid, o.rollouts, c.plan, o.seed);
  emit(o.out, [&](std::ostream& os) { io::write_sweep(os, rows); });
  return 0;
}

struct LatentOpts {
  std::string ckpt, param, grid, out;
  int segments = 50;
  std::uint64_t seed = 0;
};

int cmd_latents(const LatentOpts& o) {
  const ckpt::Checkpoint c = load_checkpoint(o.ckpt);
  if (!c.model.config().has_encoder()) throw UsageError("checkpoint has no context encoder");
  const int axis = envs::axis_index(c.model.env(), o.param);
  const std::vector<double> grid = o.grid.empty()
                                       ? envs::param_grid(c.model.env(), envs::Regime::train).axes[axis]
                                       : parse_list(o.grid, "grid");
  const auto rows = eval::export_latents(c.model, o.param, grid, o.segments, c.plan, o.seed);
  emit(o.out, [&](std::ostream& os) { io::write_latents(os, rows); });
  return 0;
}

struct TraceOpts {
  std::string ckpt, params, out;
  int warmup = 10, horizon = 20;
  std::uint64_t seed = 0;
};

int cmd_trace(const TraceOpts& o) {
  const ckpt::Checkpoint c = load_checkpoint(o.ckpt);
  envs::EnvParams p = envs::training_midpoint(c.model.env());
  if (!o.params.empty()) {
    const auto v = parse_list(o.params, "params");
    if (v.size() != 2) throw ConfigError("params", "expected two comma-separated values");
    p.values = {v[0], v[1]};
  }
  const auto rows = eval::predict_trace(c.model, p, o.warmup, o.horizon, c.plan, o.seed);
  emit(o.out, [&](std::ostream& os) { io::write_trace(os, rows); });
  return 0;
}

struct PlotOpts {
  std::string csv, out, x, y, group, title;
  bool pca = false;
};

int cmd_plot(const PlotOpts& o) {
  const io::CsvTable t = load_csv(o.csv);
  const std::string title = o.title.empty() ? fs::path(o.csv).filename().string() : o.title;
  std::string svg;
  try {
    if (o.pca) {
      std::vector<int> zcols;
      for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i].size() > 1 && t.header[i][0] == 'z') zcols.push_back(static_cast<int>(i));
      if (zcols.empty()) throw UsageError(o.csv + ": no z columns for --pca");
      Matrix pts(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(zcols.size()));
      for (std::size_t c = 0; c < zcols.size(); ++c) {
        const auto col = t.numeric_column(zcols[c]);
        for (std::size_t r = 0; r < col.size(); ++r) pts(r, c) = col[r];
      }
      const auto color = t.numeric_column(t.column_index(o.group.empty() ? "param_value" : o.group));
      const eval::PcaResult pca = eval::pca_top2(pts);
      std::vector<io::ScatterPoint> sp;
      for (Eigen::Index r = 0; r < pts.rows(); ++r) sp.push_back({pca.projections(r, 0), pca.projections(r, 1), color[r]});
      svg = io::render_scatter(sp, title, "PC1", "PC2");
    } else {
      if (t.header.size() < 2) throw UsageError(o.csv + ": need at least two columns to plot");
      const int xi = o.x.empty() ? 0 : t.column_index(o.x);
      const int yi = o.y.empty() ? 1 : t.column_index(o.y);
      const auto xs = t.numeric_column(xi);
      const auto ys = t.numeric_column(yi);
      std::vector<io::Series> series;
      if (o.group.empty()) {
        series.push_back({t.header[yi], xs, ys});
      } else {
        const int gi = t.column_index(o.group);
        std::vector<std::string> order;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          const std::string& g = t.rows[r][gi];
          auto it = std::find(order.begin(), order.end(), g);
          if (it == order.end()) {
            order.push_back(g);
            series.push_back({o.group + "=" + g, {}, {}});
            it = order.end() - 1;
          }
          auto& s = series[it - order.begin()];
          s.x.push_back(xs[r]);
          s.y.push_back(ys[r]);
        }
      }
      svg = io::render_lines(series, title, t.header[xi], t.header[yi]);
    }
  } catch (const DataError& e) {
    throw UsageError(o.csv + ": " + e.what());
  } catch (const DegenerateDataError& e) {
    throw UsageError(o.csv + ": " + e.what());
  }
  emit(o.out, [&](std::ostream& os) { os << svg; });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware dynamics models for model-based RL"};
  app.require_subcommand(1);

  TrainOpts train_o, base_o;
  auto add_train_flags = [](CLI::App* sub, TrainOpts& o) {
    sub->add_option("config", o.config, "JSON run configuration")->required();
    sub->add_option("--out", o.out, "output directory (overrides out_dir)");
    sub->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_set = true; },
                                            "random seed (overrides config)");
  };
  auto* train = app.add_subcommand("train", "train a CaDM model");
  add_train_flags(train, train_o);
  auto* base = app.add_subcommand("baseline", "train a vanilla or stacked baseline");
  add_train_flags(base, base_o);
  base->add_option("--kind", base_o.kind, "vanilla or stacked")->required();

  EvalOpts eval_o;
  auto* ev = app.add_subcommand("eval", "average returns on a parameter regime");
  ev->add_option("checkpoint", eval_o.ckpt)->required();
  ev->add_option("--env", eval_o.env)->required();
  ev->add_option("--regime", eval_o.regime, "train, moderate or extreme");
  ev->add_option("--episodes", eval_o.episodes)->check(CLI::PositiveNumber);
  ev->add_option("--seed", eval_o.seed);
  ev->add_option("--out", eval_o.out, "CSV path (default stdout)");

  SweepOpts sweep_o;
  auto* sw = app.add_subcommand("sweep", "one-step prediction error along one parameter");
  sw->add_option("checkpoint", sweep_o.ckpt)->required();
  sw->add_option("--param", sweep_o.param, "force, length or mass")->required();
  sw->add_option("--grid", sweep_o.grid, "comma-separated values (default: all regime values)");
  sw->add_option("--rollouts", sweep_o.rollouts)->check(CLI::PositiveNumber);
  sw->add_option("--seed", sweep_o.seed);
  sw->add_option("--out", sweep_o.out);

  LatentOpts lat_o;
  auto* la = app.add_subcommand("latents", "export context vectors labelled by parameter value");
  la->add_option("checkpoint", lat_o.ckpt)->required();
  la->add_option("--param", lat_o.param)->required();
  la->add_option("--grid", lat_o.grid, "comma-separated values (default: training grid)");
  la->add_option("--segments", lat_o.segments, "rows per parameter value")->check(CLI::PositiveNumber);
  la->add_option("--seed", lat_o.seed);
  la->add_option("--out", lat_o.out);

  TraceOpts trace_o;
  auto* tr = app.add_subcommand("trace", "open-loop prediction against ground truth");
  tr->add_option("checkpoint", trace_o.ckpt)->required();
  tr->add_option("--params", trace_o.params, "two comma-separated parameter values");
  tr->add_option("--warmup", trace_o.warmup)->check(CLI::PositiveNumber);
  tr->add_option("--horizon", trace_o.horizon)->check(CLI::PositiveNumber);
  tr->add_option("--seed", trace_o.seed);
  tr->add_option("--out", trace_o.out);

  PlotOpts plot_o;
  auto* pl = app.add_subcommand("plot", "render a CSV as an SVG line or scatter plot");
  pl->add_option("csv", plot_o.csv)->required();
  pl->add_option("--out", plot_o.out, "SVG path (default stdout)");
  pl->add_option("--x", plot_o.x, "x column (default first)");
  pl->add_option("--y", plot_o.y, "y column (default second)");
  pl->add_option("--group", plot_o.group, "one line per distinct value; color column with --pca");
  pl->add_option("--title", plot_o.title);
  pl->add_flag("--pca", plot_o.pca, "scatter of the top two principal components of z columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*base) return cmd_train(base_o);
    if (*ev) return cmd_eval(eval_o);
    if (*sw) return cmd_sweep(sweep_o);
    if (*la) return cmd_latents(lat_o);
    if (*tr) return cmd_trace(trace_o);
    if (*pl) return cmd_plot(plot_o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
