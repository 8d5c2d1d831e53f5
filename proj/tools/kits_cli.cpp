// kits: train, evaluate and compare inductive kriging models from the shell.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "kits/baselines.hpp"
#include "kits/data.hpp"
#include "kits/error.hpp"
#include "kits/model.hpp"
#include "kits/report.hpp"
#include "kits/training.hpp"

namespace fs = std::filesystem;
using namespace kits;

namespace {

struct RunConfig {
  std::string dataset = "synth";
  std::string topology;
  std::string pattern = "random";
  std::string strategy = "increment";
  std::string scaling = "zscore";
  std::string out = ".";
  std::string checkpoint;
  std::string baseline = "mean";
  std::size_t k = 10;
  std::size_t batches = 1000;
  bool month_split = false;
  std::optional<double> gamma;
  std::optional<double> delta;
  bool patience_set = false;
  SynthOptions synth;
  TrainConfig train;
};

// Keys are the long flag names, with "train." / "synth." / "kernel." prefixes
// accepted as aliases, e.g. {"train.epochs": 20, "alpha": 0.5}.
void apply_config_file(const fs::path& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a flat JSON object");
  for (const auto& [raw_key, v] : j.items()) {
    std::string key = raw_key;
    for (const char* prefix : {"train.", "synth.", "kernel.", "model."}) {
      if (key.starts_with(prefix)) key = key.substr(std::string(prefix).size());
    }
    try {
      if (key == "dataset") c.dataset = v.get<std::string>();
      else if (key == "topology") c.topology = v.get<std::string>();
      else if (key == "pattern") c.pattern = v.get<std::string>();
      else if (key == "strategy") c.strategy = v.get<std::string>();
      else if (key == "scaling") c.scaling = v.get<std::string>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "checkpoint") c.checkpoint = v.get<std::string>();
      else if (key == "kind") c.baseline = v.get<std::string>();
      else if (key == "k") c.k = v.get<std::size_t>();
      else if (key == "batches") c.batches = v.get<std::size_t>();
      else if (key == "month_split") c.month_split = v.get<bool>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "delta") c.delta = v.get<double>();
      else if (key == "nodes") c.synth.n_nodes = v.get<std::size_t>();
      else if (key == "steps") c.synth.steps = v.get<std::size_t>();
      else if (key == "topology_seed") c.synth.topology_seed = v.get<std::uint64_t>();
      else if (key == "dynamics_seed") c.synth.dynamics_seed = v.get<std::uint64_t>();
      else if (key == "alpha") c.train.alpha = v.get<double>();
      else if (key == "seed") c.train.seed = v.get<std::uint64_t>();
      else if (key == "epochs") c.train.max_epochs = v.get<std::size_t>();
      else if (key == "patience") {
        c.train.patience = v.get<std::size_t>();
        c.patience_set = true;
      }
      else if (key == "dim") c.train.model.dim = v.get<std::size_t>();
      else if (key == "radius") c.train.model.window_radius = v.get<std::size_t>();
      else if (key == "layers") c.train.model.layers = v.get<std::size_t>();
      else if (key == "lambda") c.train.lambda = v.get<double>();
      else if (key == "lr") c.train.lr = v.get<double>();
      else if (key == "window") c.train.window = v.get<std::size_t>();
      else if (key == "batch_size") c.train.batch_size = v.get<std::size_t>();
      else if (key == "max_batches") c.train.max_batches_per_epoch = v.get<std::size_t>();
      else if (key == "clip") c.train.grad_clip_norm = v.get<double>();
      else throw ConfigError("unknown config key '" + raw_key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + raw_key + "': " + e.what());
    }
  }
}

std::optional<fs::path> config_path(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") return fs::path(argv[i + 1]);
  }
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.starts_with("--config=")) return fs::path(a.substr(9));
  }
  return std::nullopt;
}

void add_common(CLI::App& cmd, RunConfig& c) {
  cmd.add_option("--config", "JSON file with flat keys; flags override it");
  cmd.add_option("--dataset", c.dataset, "readings CSV, or 'synth'");
  cmd.add_option("--topology", c.topology, "edge list (from,to,distance) or coords (id,lat,lon / id,x,y)");
  cmd.add_option("--alpha", c.train.alpha, "missing ratio");
  cmd.add_option("--pattern", c.pattern, "random | f2c | region");
  cmd.add_option("--strategy", c.strategy, "increment | decrement | transductive");
  cmd.add_option("--seed", c.train.seed, "root seed");
  cmd.add_option("--epochs", c.train.max_epochs);
  cmd.add_option("--patience", c.train.patience, "epochs without improvement before stopping")
      ->each([&c](const std::string&) { c.patience_set = true; });
  cmd.add_option("--dim", c.train.model.dim, "feature dimension D");
  cmd.add_option("--lambda", c.train.lambda, "weight of the cycle term");
  cmd.add_option("--lr", c.train.lr);
  cmd.add_option("--window", c.train.window, "time steps per window");
  cmd.add_option("--batch-size", c.train.batch_size);
  cmd.add_option("--max-batches", c.train.max_batches_per_epoch, "batches per epoch cap");
  cmd.add_option("--scaling", c.scaling, "zscore | minmax | none");
  cmd.add_flag("--month-split", c.month_split, "test on March, June, September and December");
  cmd.add_option("--gamma", c.gamma, "kernel width");
  cmd.add_option("--delta", c.delta, "kernel distance threshold");
  cmd.add_option("--nodes", c.synth.n_nodes, "synthetic node count");
  cmd.add_option("--steps", c.synth.steps, "synthetic time steps");
  cmd.add_option("--topology-seed", c.synth.topology_seed);
  cmd.add_option("--dynamics-seed", c.synth.dynamics_seed);
  cmd.add_option("--out", c.out, "output directory");
}

Strategy parse_strategy(const std::string& s) {
  if (s == "increment") return Strategy::increment;
  if (s == "decrement") return Strategy::decrement;
  if (s == "transductive") return Strategy::transductive;
  throw ConfigError("unknown strategy '" + s + "'");
}

MissingKind parse_pattern(const std::string& s) {
  if (s == "random") return MissingKind::random;
  if (s == "f2c" || s == "fine_to_coarse") return MissingKind::fine_to_coarse;
  if (s == "region") return MissingKind::region;
  throw ConfigError("unknown missing pattern '" + s + "'");
}

Scaling parse_scaling(const std::string& s) {
  if (s == "zscore") return Scaling::zscore;
  if (s == "minmax") return Scaling::minmax;
  if (s == "none") return Scaling::none;
  throw ConfigError("unknown scaling '" + s + "'");
}

Dataset load_dataset(const RunConfig& c) {
  Dataset ds;
  if (c.dataset == "synth") {
    ds = synth_generate(c.synth);
  } else {
    if (!fs::exists(c.dataset)) throw ConfigError("dataset " + c.dataset + " does not exist");
    if (c.topology.empty()) throw ConfigError("--topology is required for file datasets");
    if (!fs::exists(c.topology)) throw ConfigError("topology " + c.topology + " does not exist");
    ds = load(c.dataset, c.topology);
  }
  if (c.gamma) ds.kernel.gamma = c.gamma;
  if (c.delta) ds.kernel.delta = c.delta;
  return ds;
}

Experiment make_experiment(const RunConfig& c) {
  ExperimentConfig ec;
  ec.train = c.train;
  ec.train.strategy = parse_strategy(c.strategy);
  ec.pattern.kind = parse_pattern(c.pattern);
  ec.scaling = parse_scaling(c.scaling);
  ec.month_split = c.month_split;
  Dataset ds = load_dataset(c);
  ec.pattern.index_fallback = !ds.coords.has_value();
  return prepare(std::move(ds), ec);
}

fs::path out_dir(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string());
  return dir;
}

void write_metrics(const fs::path& dir, const MetricsReport& m) {
  for (double v : {m.mae, m.mape, m.mre, m.rmse, m.r2}) {
    if (!std::isfinite(v)) throw NumericalError("metrics are not finite");
  }
  write_text(dir / "metrics.json", metrics_json(m));
  std::cout << metrics_json(m);
}

int cmd_train(const RunConfig& c) {
  const fs::path dir = out_dir(c);
  TrainConfig tc = c.train;
  tc.strategy = parse_strategy(c.strategy);
  const Experiment e = make_experiment(c);
  const TrainResult r = train(training_data(e), tc);
  if (!r.best.all_finite()) throw NumericalError("trained parameters are not finite");
  save_checkpoint(dir / "model.ckpt", r.best);
  write_text(dir / "history.jsonl", history_jsonl(r.history));
  const Tensor pred = predict_test(model_predictor(r.best), e, tc.window);
  write_metrics(dir, evaluate_test(pred, e));
  return 0;
}

int cmd_evaluate(const RunConfig& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const fs::path dir = out_dir(c);
  const ModelParams params = load_checkpoint(c.checkpoint);
  if (params.config.input_dim != 1) {
    throw ConfigError("checkpoint expects " + std::to_string(params.config.input_dim) +
                      " input channels; datasets have one");
  }
  const Experiment e = make_experiment(c);
  const Tensor pred = predict_test(model_predictor(params), e, c.train.window);
  write_metrics(dir, evaluate_test(pred, e));
  return 0;
}

int cmd_baseline(const RunConfig& c) {
  const fs::path dir = out_dir(c);
  BaselineSpec spec;
  if (c.baseline == "mean") spec.kind = BaselineKind::mean;
  else if (c.baseline == "knn") spec.kind = BaselineKind::knn;
  else if (c.baseline == "okriging") spec.kind = BaselineKind::okriging;
  else throw ConfigError("unknown baseline '" + c.baseline + "'");
  spec.k = c.k;
  write_metrics(dir, evaluate_baseline(spec, make_experiment(c)));
  return 0;
}

int cmd_graph_gap(const RunConfig& c) {
  const fs::path dir = out_dir(c);
  const GraphGapReport r = graph_gap(make_experiment(c), c.train, c.batches);
  write_text(dir / "graph_gap.json", graph_gap_json(r));
  std::cout << graph_gap_json(r);
  return 0;
}

int cmd_synth(const RunConfig& c) {
  const fs::path dir = out_dir(c);
  const Dataset ds = synth_generate(c.synth);
  write_readings(dir / "readings.csv", {ds.node_ids, {}, ds.readings});
  write_coords(dir / "coords.csv", ds.node_ids, *ds.coords, ds.metric);
  std::cout << "wrote " << ds.steps() << " x " << ds.nodes() << " readings to " << dir.string()
            << " (kernel delta " << *ds.kernel.delta << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig c;
  CLI::App app{"Inductive spatio-temporal kriging with increment training"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model and report test metrics");
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  auto* base_cmd = app.add_subcommand("baseline", "score a non-learned baseline");
  auto* gap_cmd = app.add_subcommand("graph-gap", "largest-degree statistics of training graphs");
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  auto* transfer_cmd =
      app.add_subcommand("transfer", "apply a checkpoint trained elsewhere to another dataset");
  for (auto* cmd : {train_cmd, eval_cmd, base_cmd, gap_cmd, synth_cmd, transfer_cmd}) {
    add_common(*cmd, c);
  }
  for (auto* cmd : {eval_cmd, transfer_cmd}) {
    cmd->add_option("--checkpoint", c.checkpoint, "model.ckpt to load");
  }
  base_cmd->add_option("--kind", c.baseline, "mean | knn | okriging");
  base_cmd->add_option("--k", c.k, "neighbours for knn");
  gap_cmd->add_option("--batches", c.batches, "training graphs per strategy");

  try {
    if (const auto path = config_path(argc, argv)) apply_config_file(*path, c);
    app.parse(argc, argv);
    // The default patience shrinks with short runs; an explicit one is checked.
    if (!c.patience_set) c.train.patience = std::min(c.train.patience, c.train.max_epochs);
    if (*train_cmd) return cmd_train(c);
    if (*eval_cmd || *transfer_cmd) return cmd_evaluate(c);
    if (*base_cmd) return cmd_baseline(c);
    if (*gap_cmd) return cmd_graph_gap(c);
    if (*synth_cmd) return cmd_synth(c);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const kits::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
