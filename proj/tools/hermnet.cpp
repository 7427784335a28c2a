// hermnet: train, evaluate and run HermNet interatomic potentials.
//
// Exit codes: 0 success, 1 self-check failure or internal error,
// 2 usage/config/input error, 3 training diverged, 4 element vocabulary
// mismatch between checkpoint and data.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include "hermnet/checkpoint.hpp"
#include "hermnet/config.hpp"
#include "hermnet/deepmd_raw.hpp"
#include "hermnet/error.hpp"
#include "hermnet/extxyz.hpp"
#include "hermnet/model.hpp"
#include "hermnet/selfcheck.hpp"
#include "hermnet/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hermnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitVocabulary = 4;

/// Missing inputs and inconsistent settings.
struct UsageError : Error {
  using Error::Error;
};

DataFormat format_arg(const std::string& name) {
  try {
    return parse_format(name);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

Dataset load_dataset(const fs::path& path, DataFormat format) {
  if (!fs::exists(path)) throw UsageError("no such file or directory: " + path.string());
  if (format == DataFormat::kDeepmdRaw) return read_deepmd_raw(path);
  return read_extxyz(path.string());
}

json metrics_json(const Metrics& m) {
  json j;
  j["energy_mae_meV"] = m.energy_mae * 1e3;
  j["energy_mae_per_atom_meV"] = m.energy_mae_per_atom * 1e3;
  j["energy_rmse_per_atom_meV"] = m.energy_rmse_per_atom * 1e3;
  j["force_mae_meV_per_A"] = m.force_mae * 1e3;
  j["force_rmse_meV_per_A"] = m.force_rmse * 1e3;
  j["n_frames"] = m.n_frames;
  j["n_force_components"] = m.n_force_components;
  return j;
}

json relations_json(const ModelConfig& c) {
  json j;
  j["radial"] = json::array();
  j["angular"] = json::array();
  for (const auto& k : radial_keys(c)) j["radial"].push_back(relation_name(k));
  for (const auto& k : angular_keys(c)) j["angular"].push_back(relation_name(k));
  return j;
}

std::size_t default_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> data, format, out;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  if (!fs::exists(args.config)) throw UsageError("no such config file: " + args.config);
  RunConfig cfg = load_run_config(args.config);
  if (args.data) cfg.data_path = *args.data;
  if (args.format) cfg.data_format = format_arg(*args.format);
  if (args.out) cfg.output_dir = *args.out;
  if (args.seed) cfg.train.seed = *args.seed;
  cfg.train.threads = args.threads ? *args.threads : cfg.threads.value_or(default_threads());

  const Dataset data = load_dataset(cfg.data_path, cfg.data_format);
  if (data.empty()) throw UsageError("dataset " + cfg.data_path.string() + " has no frames");
  if (cfg.n_val >= data.size()) {
    throw UsageError("n_val = " + std::to_string(cfg.n_val) + " leaves no training frames");
  }
  const std::size_t n_train = cfg.n_train ? *cfg.n_train : data.size() - cfg.n_val;
  if (n_train + cfg.n_val > data.size()) {
    throw UsageError("n_train + n_val = " + std::to_string(n_train + cfg.n_val) +
                     " exceeds the " + std::to_string(data.size()) + " frames in " +
                     cfg.data_path.string());
  }
  const DatasetSplit split = split_dataset(data, n_train, cfg.n_val, cfg.train.seed);

  cfg.model.element_set = data.element_set();
  Model model = make_model(cfg.model, cfg.train.seed);
  initialize_references(model, split.train, &std::cerr);

  fs::create_directories(cfg.output_dir);
  std::ofstream log(cfg.output_dir / "train.log");
  if (!log) throw Error("cannot write " + (cfg.output_dir / "train.log").string());
  std::cerr << "training " << variant_name(cfg.model.variant) << " on "
            << split.train.size() << " frames (" << split.validation.size()
            << " validation, " << split.test.size() << " held out) with "
            << cfg.train.threads << " thread(s)\n";
  TrainHooks hooks{&log, &std::cerr};
  const TrainResult result = train(model, split.train, split.validation, cfg.train, hooks);
  save_checkpoint(cfg.output_dir / "model.ckpt", model);

  json summary;
  summary["variant"] = variant_name(model.config.variant);
  json elements = json::array();
  for (int z : model.config.element_set) elements.push_back(element_symbol(z));
  summary["elements"] = elements;
  summary["hidden"] = model.config.hidden;
  summary["layers"] = model.config.layers;
  summary["r_cut"] = model.config.r_cut;
  summary["relations"] = relations_json(model.config);
  summary["n_train"] = split.train.size();
  summary["n_val"] = split.validation.size();
  summary["n_test"] = split.test.size();
  summary["epochs"] = result.history.size();
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_loss"] = result.best_val_loss;
  summary["final_lr"] = result.history.back().lr;
  json metrics;
  metrics["train"] = metrics_json(evaluate(model, split.train, cfg.train.threads));
  if (!split.validation.empty()) {
    metrics["validation"] = metrics_json(evaluate(model, split.validation, cfg.train.threads));
  }
  if (!split.test.empty()) {
    metrics["test"] = metrics_json(evaluate(model, split.test, cfg.train.threads));
  }
  summary["metrics"] = metrics;
  std::ofstream(cfg.output_dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& format, std::size_t threads) {
  if (!fs::exists(checkpoint)) throw UsageError("no such checkpoint: " + checkpoint);
  const Model model = load_checkpoint(fs::path(checkpoint));
  const Dataset data = load_dataset(data_path, format_arg(format));
  std::cout << metrics_json(evaluate(model, data, threads)).dump(2) << '\n';
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& data_path,
                const std::string& format, std::size_t threads,
                const std::optional<std::string>& out) {
  if (!fs::exists(checkpoint)) throw UsageError("no such checkpoint: " + checkpoint);
  const Model model = load_checkpoint(fs::path(checkpoint));
  const Dataset data = load_dataset(data_path, format_arg(format));
  const auto graphs = build_graphs(data, model.config.r_cut, threads);
  const auto preds = predict_frames(model, data, graphs, true, threads);
  Dataset labeled;
  for (std::size_t k = 0; k < data.size(); ++k) {
    LabeledFrame f;
    f.structure = data[k].structure;
    f.energy = preds[k].energy;
    f.forces = preds[k].forces;
    labeled.push_back(std::move(f));
  }
  if (out) {
    std::ofstream os(*out);
    if (!os) throw Error("cannot write " + *out);
    write_extxyz(os, labeled);
  } else {
    write_extxyz(std::cout, labeled);
  }
  return kExitOk;
}

int cmd_selfcheck(const std::string& inject) {
  FaultInjection fault;
  if (inject == "rvec-sign") {
    fault.flip_rvec_component = true;
  } else if (inject == "cutoff-exponent") {
    fault.cutoff_exponent = 0.25;
  } else if (inject != "none") {
    throw Error("unknown fault '" + inject + "'");
  }
  bool ok = true;
  for (const CheckResult& r : run_selfcheck(fault)) {
    std::cout << (r.passed ? "PASS" : "FAIL") << '\t' << r.name << '\t' << r.detail << '\n';
    if (!r.passed) {
      std::cerr << "selfcheck failed: " << r.name << " (" << r.detail << ")\n";
      ok = false;
    }
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HermNet interatomic potentials"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", targs.config, "Config file")->required();
  train_cmd->add_option("--data", targs.data, "Dataset path (overrides config)");
  train_cmd->add_option("--format", targs.format, "extxyz or deepmd_raw (overrides config)");
  train_cmd->add_option("--out", targs.out, "Output directory (overrides config)");
  train_cmd->add_option("--threads", targs.threads, "Worker threads")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", targs.seed, "Random seed (overrides config)");

  std::string checkpoint, data_path, format = "extxyz";
  std::size_t threads = default_threads();
  std::optional<std::string> out;
  std::optional<std::uint64_t> unused_seed;
  auto* eval_cmd = app.add_subcommand("eval", "Print error metrics of a checkpoint on a dataset");
  auto* predict_cmd = app.add_subcommand("predict", "Write predicted energies and forces as extxyz");
  for (auto* cmd : {eval_cmd, predict_cmd}) {
    cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    cmd->add_option("--data", data_path, "Structures to evaluate")->required();
    cmd->add_option("--format", format, "extxyz or deepmd_raw");
    cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", unused_seed, "Accepted for uniformity; evaluation is deterministic");
  }
  predict_cmd->add_option("--out", out, "Output file (default stdout)");

  std::string inject = "none";
  auto* self_cmd = app.add_subcommand("selfcheck", "Run the invariant self-check");
  self_cmd->add_option("--inject", inject, "Deliberate defect: none, rvec-sign, cutoff-exponent")
      ->check(CLI::IsMember({"none", "rvec-sign", "cutoff-exponent"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(targs);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, data_path, format, threads);
    if (predict_cmd->parsed()) return cmd_predict(checkpoint, data_path, format, threads, out);
    if (self_cmd->parsed()) return cmd_selfcheck(inject);
  } catch (const VocabularyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitVocabulary;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
