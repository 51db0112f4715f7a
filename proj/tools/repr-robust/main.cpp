#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "commands.hpp"
#include "repr_robust/parallel.hpp"

namespace {

using nlohmann::json;
using repr_robust::cli::ConfigError;

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

const std::map<std::string, std::string> kDescriptions = {
    {"gen-data", "generate and save the synthetic train/eval splits"},
    {"pretrain", "standard contrastive pretraining from scratch"},
    {"advtrain", "adversarial fine-tuning of a checkpoint"},
    {"attack", "run one attack against a checkpoint"},
    {"measure", "breakaway, overlap, universal and relative quantiles"},
    {"certify", "randomized or center smoothing certificates"},
    {"probe", "fit standard, lowpass and noise linear probes"},
    {"impersonate", "targeted impersonation between class pairs"},
    {"report", "collect results into wide and long CSV tables"},
};

struct Overrides {
  std::string checkpoint, encoder_id, kind, mode, method, train_path, eval_path;
  int epochs = -1;
  long samples = -1;
  std::vector<std::string> inputs;
};

void apply(const std::string& command, const Overrides& o, json& c) {
  if (!o.checkpoint.empty()) c["checkpoint"] = o.checkpoint;
  if (!o.encoder_id.empty()) c["encoder_id"] = o.encoder_id;
  if (!o.kind.empty()) c["kind"] = o.kind;
  if (!o.method.empty()) c["method"] = o.method;
  if (!o.mode.empty()) c["train"]["adversarial"] = o.mode;
  if (o.epochs >= 0) c["train"]["epochs"] = o.epochs;
  if (o.samples >= 0) c["samples"] = o.samples;
  if (!o.train_path.empty()) c["dataset"]["train_path"] = o.train_path;
  if (!o.eval_path.empty()) c["dataset"]["eval_path"] = o.eval_path;
  if (command == "report" && !o.inputs.empty()) c["inputs"] = o.inputs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Representation robustness toolkit: synthetic data, contrastive training, attacks, "
               "robustness measures, certification and reports."};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out = "out";
  Overrides o;

  for (const auto& name : repr_robust::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("--config", config_path, "JSON config merged onto the defaults");
    sub->add_option("--seed", seed, "global seed")->capture_default_str();
    sub->add_option("--workers", workers, "worker threads (default: REPR_ROBUST_WORKERS or hardware)");
    sub->add_option("--out", out, "output directory")->capture_default_str();
    if (name != "gen-data" && name != "report") {
      sub->add_option("--train-data", o.train_path, "saved training split");
      sub->add_option("--eval-data", o.eval_path, "saved evaluation split");
    }
    if (name == "pretrain" || name == "advtrain") {
      sub->add_option("--epochs", o.epochs);
      sub->add_option("--encoder-id", o.encoder_id);
      if (name == "advtrain") {
        sub->add_option("--mode", o.mode, "none, targeted, untargeted or batch-loss");
        sub->add_option("--checkpoint", o.checkpoint, "encoder to fine-tune")->required();
      }
    } else if (name != "gen-data" && name != "report") {
      sub->add_option("--checkpoint", o.checkpoint, "encoder checkpoint")->required();
      sub->add_option("--encoder-id", o.encoder_id);
    }
    if (name == "attack" || name == "certify") sub->add_option("--samples", o.samples);
    if (name == "attack") sub->add_option("--method", o.method, "u-pgd, u-fgsm or batch-info-nce");
    if (name == "certify") sub->add_option("--kind", o.kind, "classifier or center");
    if (name == "report") sub->add_option("inputs", o.inputs, "results.json files or run directories");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    repr_robust::cli::Invocation inv;
    inv.command = command;
    inv.config = read_config(config_path);
    if (!inv.config.is_object()) throw ConfigError("config file must hold a JSON object");
    apply(command, o, inv.config);
    inv.seed = seed;
    inv.workers = workers > 0 ? workers : repr_robust::default_workers();
    inv.out = out;
    const json results = repr_robust::cli::run(inv);
    std::cout << command << ": wrote " << (inv.out / "results.json").string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "repr-robust " << command << ": config error: " << e.what() << "\n";
    return 3;
  } catch (const repr_robust::FormatError& e) {
    std::cerr << "repr-robust " << command << ": bad input file: " << e.what() << "\n";
    return 4;
  } catch (const repr_robust::ShapeError& e) {
    std::cerr << "repr-robust " << command << ": shape mismatch: " << e.what() << "\n";
    return 5;
  } catch (const repr_robust::DomainError& e) {
    std::cerr << "repr-robust " << command << ": invalid value: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "repr-robust " << command << ": " << e.what() << "\n";
    return 1;
  }
}
