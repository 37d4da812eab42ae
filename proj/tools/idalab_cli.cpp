// Command-line front end: gen-data, train, eval, sweep-if, ablate, report.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "idalab/experiment.hpp"
#include "idalab/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace idalab;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2, kOverwriteRefused = 3 };

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "override a config field, e.g. train.lambda=2 or imbalance_factor=20");
  cmd->add_option("--seed", o.seed, "run a single training seed");
  cmd->add_option("-o,--output", o.output, "output directory (overrides the config)");
  cmd->add_flag("--force", o.force, "write into a non-empty output directory");
}

ExperimentConfig resolve(const CommonOptions& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
  }
  for (const auto& s : o.overrides) apply_override(doc, s);
  ExperimentConfig cfg = parse_experiment(doc);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.output.empty()) cfg.output_dir = o.output;
  if (const char* root = std::getenv("IDALAB_OUTPUT_ROOT"); root && *root && cfg.output_dir.is_relative()) {
    cfg.output_dir = fs::path(root) / cfg.output_dir;
  }
  return cfg;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Imbalanced domain adaptation experiments on synthetic shifted data"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  CommonOptions gen_opts, train_opts, sweep_opts, ablate_opts;
  auto* gen = app.add_subcommand("gen-data", "generate source.csv and target.csv");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train once per seed and write run artifacts");
  add_common(train, train_opts);

  std::string checkpoint, data_path;
  int num_classes = 0;
  auto* eval = app.add_subcommand("eval", "per-class mean accuracy of a checkpoint on a labeled dataset file");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--num-classes", num_classes, "class count (defaults to the checkpoint's)");

  std::vector<double> ifs{1, 5, 10, 20};
  auto* sweep = app.add_subcommand("sweep-if", "compare methods across imbalance factors");
  add_common(sweep, sweep_opts);
  sweep->add_option("--if", ifs, "imbalance factors")->delimiter(',');

  auto* abl = app.add_subcommand("ablate", "cumulative component ablation");
  add_common(abl, ablate_opts);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "rebuild summary.csv, aggregate.json and plot data from run reports");
  report->add_option("dir", report_dir, "experiment output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) {
      const auto cfg = resolve(gen_opts);
      prepare_output_dir(cfg.output_dir, gen_opts.force);
      const auto [source, target] = generate(cfg.data);
      save_dataset(source, cfg.output_dir / "source.csv");
      save_dataset(target, cfg.output_dir / "target.csv");
      std::ofstream(cfg.output_dir / "config.json") << json(cfg).dump(2) << '\n';
      spdlog::info("wrote {} source and {} target samples to {}", source.size(), target.size(), cfg.output_dir.string());
    } else if (*train) {
      const auto result = run_experiment(resolve(train_opts), train_opts.force);
      print_json(result.aggregate);
    } else if (*eval) {
      auto state = load_checkpoint(checkpoint);
      const auto ds = load_dataset(data_path, num_classes > 0 ? std::optional<int>(num_classes)
                                                              : std::optional<int>(state.config.num_classes));
      const auto truth = TargetLabels::reveal(ds);
      const auto predictions = argmax_labels(infer(state, ds));
      json per_class = json::array();
      for (const auto& a : per_class_accuracy(predictions, truth.labels(), truth.num_classes()))
        per_class.push_back(a ? json(*a) : json(nullptr));
      print_json({{"samples", ds.size()},
                  {"per_class_mean_accuracy", per_class_mean_accuracy(predictions, truth.labels(), truth.num_classes())},
                  {"per_class_accuracy", per_class}});
    } else if (*sweep) {
      json rows = json::array();
      for (const auto& r : sweep_if(resolve(sweep_opts), ifs, sweep_opts.force)) {
        rows.push_back({{"imbalance_factor", r.imbalance_factor},
                        {"source_only", r.source_only},
                        {"no_lsc", r.no_lsc},
                        {"full", r.full}});
      }
      print_json(rows);
    } else if (*abl) {
      json rows = json::array();
      for (const auto& r : ablate(resolve(ablate_opts), ablate_opts.force))
        rows.push_back({{"variant", r.variant}, {"accuracy", r.accuracy}});
      print_json(rows);
    } else if (*report) {
      std::ifstream in(fs::path(report_dir) / "manifest.json");
      if (!in) throw ConfigError(report_dir + " has no manifest.json");
      const json manifest = json::parse(in);
      std::vector<RunReport> reports;
      for (const auto& run : manifest.at("runs")) {
        if (run.at("status") != "complete") {
          spdlog::warn("skipping {} run {}", run.at("status").get<std::string>(), run.at("dir").get<std::string>());
          continue;
        }
        reports.push_back(read_report(fs::path(report_dir) / run.at("dir").get<std::string>() / "report.json"));
      }
      if (reports.empty()) throw std::runtime_error("no complete runs in " + report_dir);
      emit_report(reports, report_dir);
      print_json(aggregate(reports));
    }
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfigError;
  } catch (const OverwriteRefused& e) {
    spdlog::error("{}", e.what());
    return kOverwriteRefused;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
  return kOk;
}
