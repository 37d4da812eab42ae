#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "idalab/config.hpp"
#include "idalab/lsc.hpp"
#include "idalab/trainer.hpp"
#include "json.hpp"

namespace idalab {

// Output directory exists and is not empty, and overwriting was not allowed.
class OverwriteRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunReport {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> records;
  std::vector<double> final_per_class_accuracy;
  double per_class_mean_accuracy = 0.0;
  std::optional<LabelShiftState> shift;
  std::vector<double> true_target_distribution;
  std::optional<double> distribution_l1_error;
  double wall_clock_seconds = 0.0;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};
Summary summarize(const std::vector<double>& values);

struct Aggregate {
  std::size_t runs = 0;
  Summary per_class_mean_accuracy;
  std::vector<Summary> per_class_accuracy;
  std::optional<Summary> distribution_l1_error;
};
// Pure function of the reports.
Aggregate aggregate(const std::vector<RunReport>& reports);

void to_json(nlohmann::json& j, const StepLosses& l);
void from_json(const nlohmann::json& j, StepLosses& l);
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const LabelShiftState& s);
void from_json(const nlohmann::json& j, LabelShiftState& s);
void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);
void to_json(nlohmann::json& j, const Summary& s);
void to_json(nlohmann::json& j, const Aggregate& a);

// One training run with the hidden target labels handed to the evaluator only.
struct RunOutput {
  RunReport report;
  ModelState state;
};
RunOutput run_once(const ExperimentConfig& cfg, std::uint64_t seed, const DomainDataset& source,
                   const DomainDataset& target);

// Creates `dir`, refusing a non-empty existing directory unless `force`.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

// Writes epoch_records.jsonl, report.json and checkpoint into `dir`.
void write_run(const std::filesystem::path& dir, const RunOutput& run);
RunReport read_report(const std::filesystem::path& path);

struct ExperimentResult {
  std::vector<RunReport> reports;
  Aggregate aggregate;
};

// Generates the data, trains once per seed and writes every artifact under
// cfg.output_dir. A manifest marks each run as pending, complete or failed.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool force);

// summary.csv, aggregate.json and plotdata/*.json for a set of reports.
void emit_report(const std::vector<RunReport>& reports, const std::filesystem::path& dir);

inline constexpr const char* kSummaryHeader =
    "name,seed,per_class_mean_accuracy,final_false_pseudo_rate,distribution_l1_error,wall_clock_seconds";

struct SweepRow {
  double imbalance_factor = 1.0;
  double source_only = 0.0;
  double no_lsc = 0.0;
  double full = 0.0;
};
// Full method, source-only and no-calibration at each imbalance factor; mean
// over the configured seeds. Writes sweep_if.csv and plotdata/if_sweep.json.
std::vector<SweepRow> sweep_if(const ExperimentConfig& base, const std::vector<double>& imbalance_factors, bool force);

struct AblationRow {
  std::string variant;
  AblationMask components;
  Summary accuracy;
};
// Cumulative variants: source_only, +domain, +centroid, +discriminative, +calibration.
// Writes ablation.csv.
std::vector<AblationRow> ablate(const ExperimentConfig& base, bool force);

}  // namespace idalab
