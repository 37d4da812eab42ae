#include "idalab/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "idalab/metrics.hpp"

namespace idalab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_number(double v) { return fmt::format("{:.6g}", v); }
std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

}  // namespace

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

Aggregate aggregate(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  Aggregate a;
  a.runs = reports.size();
  std::vector<double> acc, l1;
  for (const auto& r : reports) {
    acc.push_back(r.per_class_mean_accuracy);
    if (r.distribution_l1_error) l1.push_back(*r.distribution_l1_error);
  }
  a.per_class_mean_accuracy = summarize(acc);
  if (l1.size() == reports.size()) a.distribution_l1_error = summarize(l1);
  const std::size_t classes = reports.front().final_per_class_accuracy.size();
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> col;
    for (const auto& r : reports) col.push_back(r.final_per_class_accuracy.at(k));
    a.per_class_accuracy.push_back(summarize(col));
  }
  return a;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const StepLosses& l) {
  j = json{{"classification", l.classification}, {"centroid", l.centroid}, {"discriminative", l.discriminative},
           {"domain", l.domain},                 {"total", l.total}};
}

void from_json(const json& j, StepLosses& l) {
  j.at("classification").get_to(l.classification);
  j.at("centroid").get_to(l.centroid);
  j.at("discriminative").get_to(l.discriminative);
  j.at("domain").get_to(l.domain);
  j.at("total").get_to(l.total);
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},
           {"stage", r.stage},
           {"losses", r.mean_losses},
           {"learning_rate", r.learning_rate},
           {"grl_coeff", r.grl_coeff},
           {"centroid_degenerate_steps", r.centroid_degenerate_steps},
           {"discriminative_degenerate_steps", r.discriminative_degenerate_steps},
           {"calibrated_proportion", optional_json(r.calibrated_proportion)},
           {"raw_pseudo_accuracy", optional_json(r.raw_pseudo_accuracy)},
           {"calibrated_pseudo_accuracy", optional_json(r.calibrated_pseudo_accuracy)},
           {"subset_raw_accuracy", optional_json(r.subset_raw_accuracy)},
           {"subset_calibrated_accuracy", optional_json(r.subset_calibrated_accuracy)},
           {"false_pseudo_rate", optional_json(r.false_pseudo_rate)},
           {"target_per_class_mean_accuracy", optional_json(r.target_per_class_mean_accuracy)},
           {"target_per_class_accuracy", r.target_per_class_accuracy}};
}

void from_json(const json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("stage").get_to(r.stage);
  j.at("losses").get_to(r.mean_losses);
  j.at("learning_rate").get_to(r.learning_rate);
  j.at("grl_coeff").get_to(r.grl_coeff);
  j.at("centroid_degenerate_steps").get_to(r.centroid_degenerate_steps);
  j.at("discriminative_degenerate_steps").get_to(r.discriminative_degenerate_steps);
  r.calibrated_proportion = optional_from(j, "calibrated_proportion");
  r.raw_pseudo_accuracy = optional_from(j, "raw_pseudo_accuracy");
  r.calibrated_pseudo_accuracy = optional_from(j, "calibrated_pseudo_accuracy");
  r.subset_raw_accuracy = optional_from(j, "subset_raw_accuracy");
  r.subset_calibrated_accuracy = optional_from(j, "subset_calibrated_accuracy");
  r.false_pseudo_rate = optional_from(j, "false_pseudo_rate");
  r.target_per_class_mean_accuracy = optional_from(j, "target_per_class_mean_accuracy");
  j.at("target_per_class_accuracy").get_to(r.target_per_class_accuracy);
}

void to_json(json& j, const LabelShiftState& s) {
  j = json{{"source_prior", s.source_prior},
           {"target_prior_estimate", s.target_prior_estimate},
           {"shift_metric", s.shift_metric},
           {"weights", s.weights},
           {"h_m", s.h_m}};
}

void from_json(const json& j, LabelShiftState& s) {
  s = LabelShiftState::build(j.at("source_prior").get<std::vector<double>>(),
                             j.at("target_prior_estimate").get<std::vector<double>>(), j.at("h_m").get<double>());
}

void to_json(json& j, const RunReport& r) {
  j = json{{"name", r.name},
           {"seed", r.seed},
           {"per_class_mean_accuracy", r.per_class_mean_accuracy},
           {"final_per_class_accuracy", r.final_per_class_accuracy},
           {"label_shift", r.shift ? json(*r.shift) : json(nullptr)},
           {"true_target_distribution", r.true_target_distribution},
           {"distribution_l1_error", optional_json(r.distribution_l1_error)},
           {"wall_clock_seconds", r.wall_clock_seconds},
           {"records", r.records}};
}

void from_json(const json& j, RunReport& r) {
  j.at("name").get_to(r.name);
  j.at("seed").get_to(r.seed);
  j.at("per_class_mean_accuracy").get_to(r.per_class_mean_accuracy);
  j.at("final_per_class_accuracy").get_to(r.final_per_class_accuracy);
  if (!j.at("label_shift").is_null()) r.shift = j.at("label_shift").get<LabelShiftState>();
  j.at("true_target_distribution").get_to(r.true_target_distribution);
  r.distribution_l1_error = optional_from(j, "distribution_l1_error");
  j.at("wall_clock_seconds").get_to(r.wall_clock_seconds);
  j.at("records").get_to(r.records);
}

void to_json(json& j, const Summary& s) { j = json{{"mean", s.mean}, {"stddev", s.stddev}}; }

void to_json(json& j, const Aggregate& a) {
  j = json{{"runs", a.runs},
           {"per_class_mean_accuracy", a.per_class_mean_accuracy},
           {"per_class_accuracy", a.per_class_accuracy},
           {"distribution_l1_error", a.distribution_l1_error ? json(*a.distribution_l1_error) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Runs

RunOutput run_once(const ExperimentConfig& cfg, std::uint64_t seed, const DomainDataset& source,
                   const DomainDataset& target) {
  const auto start = std::chrono::steady_clock::now();
  const auto truth = TargetLabels::reveal(target);
  AuditObserver audit(truth);
  RunResult result = run(source, target, cfg.effective_model(), cfg.effective_train(seed), &audit);

  RunOutput out{{}, std::move(result.state)};
  RunReport& r = out.report;
  r.name = cfg.name;
  r.seed = seed;
  r.records = std::move(result.records);
  r.final_per_class_accuracy = r.records.back().target_per_class_accuracy;
  r.per_class_mean_accuracy = r.records.back().target_per_class_mean_accuracy.value();
  r.true_target_distribution = truth.distribution();
  r.shift = std::move(result.shift);
  if (r.shift) {
    double l1 = 0.0;
    for (std::size_t k = 0; k < r.true_target_distribution.size(); ++k)
      l1 += std::abs(r.shift->target_prior_estimate[k] - r.true_target_distribution[k]);
    r.distribution_l1_error = l1;
  }
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::info("{} seed {}: per-class mean accuracy {:.4f} ({:.1f}s)", r.name, seed, r.per_class_mean_accuracy,
               r.wall_clock_seconds);
  return out;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw OverwriteRefused(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw OverwriteRefused(dir.string() + " is not empty; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

void write_run(const fs::path& dir, const RunOutput& run) {
  fs::create_directories(dir);
  std::string lines;
  for (const auto& rec : run.report.records) lines += json(rec).dump() + "\n";
  write_text(dir / "epoch_records.jsonl", lines);
  write_json(dir / "report.json", run.report);
  save_checkpoint(run.state, dir / "checkpoint");
}

RunReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in).get<RunReport>();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool force) {
  cfg.validate();
  prepare_output_dir(cfg.output_dir, force);
  write_json(cfg.output_dir / "config.json", cfg);

  const auto [source, target] = generate(cfg.data);
  fs::create_directories(cfg.output_dir / "data");
  save_dataset(source, cfg.output_dir / "data" / "source.csv");
  save_dataset(target, cfg.output_dir / "data" / "target.csv");

  json manifest{{"name", cfg.name}, {"runs", json::array()}};
  for (auto seed : cfg.seeds) {
    manifest["runs"].push_back(
        {{"seed", seed}, {"dir", fmt::format("runs/{}_seed{}", cfg.name, seed)}, {"status", "pending"}});
  }
  manifest["complete"] = false;
  write_json(cfg.output_dir / "manifest.json", manifest);

  ExperimentResult result;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    auto& entry = manifest["runs"][i];
    try {
      auto out = run_once(cfg, cfg.seeds[i], source, target);
      write_run(cfg.output_dir / entry["dir"].get<std::string>(), out);
      result.reports.push_back(std::move(out.report));
      entry["status"] = "complete";
      write_json(cfg.output_dir / "manifest.json", manifest);
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      write_json(cfg.output_dir / "manifest.json", manifest);
      if (!result.reports.empty()) emit_report(result.reports, cfg.output_dir);
      throw;
    }
  }
  manifest["complete"] = true;
  write_json(cfg.output_dir / "manifest.json", manifest);
  emit_report(result.reports, cfg.output_dir);
  result.aggregate = aggregate(result.reports);
  return result;
}

// ---------------------------------------------------------------------------
// Reports

void emit_report(const std::vector<RunReport>& reports, const fs::path& dir) {
  if (reports.empty()) throw std::invalid_argument("emit_report: no reports");
  fs::create_directories(dir / "plotdata");
  const std::size_t classes = reports.front().final_per_class_accuracy.size();

  std::string csv = kSummaryHeader;
  for (std::size_t k = 0; k < classes; ++k) csv += fmt::format(",accuracy_class_{}", k);
  csv += "\n";
  for (const auto& r : reports) {
    csv += fmt::format("{},{},{},{},{},{}", r.name, r.seed, csv_number(r.per_class_mean_accuracy),
                       csv_number(r.records.back().false_pseudo_rate), csv_number(r.distribution_l1_error),
                       csv_number(r.wall_clock_seconds));
    for (double a : r.final_per_class_accuracy) csv += "," + csv_number(a);
    csv += "\n";
  }
  write_text(dir / "summary.csv", csv);
  write_json(dir / "aggregate.json", json{{"aggregate", aggregate(reports)}, {"reports", reports}});

  json proportion = json::array(), pseudo = json::array(), distribution = json::array(), accuracy = json::array();
  for (const auto& r : reports) {
    json epochs = json::array(), prop = json::array(), raw = json::array(), cal = json::array(),
         fpr = json::array(), acc = json::array();
    for (const auto& rec : r.records) {
      epochs.push_back(rec.epoch);
      prop.push_back(optional_json(rec.calibrated_proportion));
      raw.push_back(optional_json(rec.subset_raw_accuracy));
      cal.push_back(optional_json(rec.subset_calibrated_accuracy));
      fpr.push_back(optional_json(rec.false_pseudo_rate));
      acc.push_back(optional_json(rec.target_per_class_mean_accuracy));
    }
    proportion.push_back({{"name", r.name}, {"seed", r.seed}, {"epoch", epochs}, {"calibrated_proportion", prop}});
    pseudo.push_back({{"name", r.name},
                      {"seed", r.seed},
                      {"epoch", epochs},
                      {"raw_label_accuracy", raw},
                      {"calibrated_label_accuracy", cal}});
    accuracy.push_back(
        {{"name", r.name}, {"seed", r.seed}, {"epoch", epochs}, {"per_class_mean_accuracy", acc}, {"false_pseudo_rate", fpr}});
    if (r.shift) {
      distribution.push_back({{"name", r.name},
                              {"seed", r.seed},
                              {"true", r.true_target_distribution},
                              {"estimated", r.shift->target_prior_estimate},
                              {"source", r.shift->source_prior},
                              {"l1_error", optional_json(r.distribution_l1_error)}});
    }
  }
  write_json(dir / "plotdata" / "calibrated_proportion.json", json{{"series", proportion}});
  write_json(dir / "plotdata" / "calibrated_subset_accuracy.json", json{{"series", pseudo}});
  write_json(dir / "plotdata" / "target_accuracy.json", json{{"series", accuracy}});
  write_json(dir / "plotdata" / "distribution_estimate.json", json{{"runs", distribution}});
}

// ---------------------------------------------------------------------------
// Drivers

namespace {

constexpr AblationMask kSourceOnly{false, false, false, false};
constexpr AblationMask kNoCalibration{true, true, true, false};
constexpr AblationMask kFull{true, true, true, true};

double mean_accuracy(const ExperimentConfig& base, const std::string& name, double imbalance, AblationMask mask,
                     const fs::path& root, bool force) {
  ExperimentConfig c = base;
  c.name = name;
  c.data.imbalance_factor = imbalance;
  c.components = mask;
  c.output_dir = root / name;
  return run_experiment(c, force).aggregate.per_class_mean_accuracy.mean;
}

}  // namespace

std::vector<SweepRow> sweep_if(const ExperimentConfig& base, const std::vector<double>& imbalance_factors, bool force) {
  if (imbalance_factors.empty()) throw ConfigError("sweep needs at least one imbalance factor");
  for (double f : imbalance_factors)
    if (!(f >= 1.0)) throw ConfigError("imbalance factors must be >= 1");
  prepare_output_dir(base.output_dir, force);

  std::vector<SweepRow> rows;
  for (double f : imbalance_factors) {
    const std::string tag = fmt::format("if{:g}", f);
    SweepRow row;
    row.imbalance_factor = f;
    row.source_only = mean_accuracy(base, tag + "_source_only", f, kSourceOnly, base.output_dir, force);
    row.no_lsc = mean_accuracy(base, tag + "_no_lsc", f, kNoCalibration, base.output_dir, force);
    row.full = mean_accuracy(base, tag + "_full", f, kFull, base.output_dir, force);
    rows.push_back(row);
  }

  std::string csv = "imbalance_factor,source_only,no_lsc,full\n";
  json series{{"imbalance_factor", json::array()}, {"source_only", json::array()}, {"no_lsc", json::array()},
              {"full", json::array()}};
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{}\n", csv_number(r.imbalance_factor), csv_number(r.source_only), csv_number(r.no_lsc),
                       csv_number(r.full));
    series["imbalance_factor"].push_back(r.imbalance_factor);
    series["source_only"].push_back(r.source_only);
    series["no_lsc"].push_back(r.no_lsc);
    series["full"].push_back(r.full);
  }
  write_text(base.output_dir / "sweep_if.csv", csv);
  fs::create_directories(base.output_dir / "plotdata");
  write_json(base.output_dir / "plotdata" / "if_sweep.json", series);
  return rows;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base, bool force) {
  prepare_output_dir(base.output_dir, force);
  const std::vector<std::pair<std::string, AblationMask>> variants{
      {"source_only", kSourceOnly},
      {"plus_domain", {true, false, false, false}},
      {"plus_centroid", {true, true, false, false}},
      {"plus_discriminative", kNoCalibration},
      {"plus_calibration", kFull},
  };
  std::vector<AblationRow> rows;
  std::string csv =
      "variant,domain_adversarial,centroid_alignment,discriminative_alignment,label_shift_calibration,"
      "mean_accuracy,stddev_accuracy,runs\n";
  for (const auto& [name, mask] : variants) {
    ExperimentConfig c = base;
    c.name = name;
    c.components = mask;
    c.output_dir = base.output_dir / name;
    const auto result = run_experiment(c, force);
    rows.push_back({name, mask, result.aggregate.per_class_mean_accuracy});
    csv += fmt::format("{},{:d},{:d},{:d},{:d},{},{},{}\n", name, mask.domain_adversarial, mask.centroid_alignment,
                       mask.discriminative_alignment, mask.label_shift_calibration,
                       csv_number(rows.back().accuracy.mean), csv_number(rows.back().accuracy.stddev),
                       result.aggregate.runs);
  }
  write_text(base.output_dir / "ablation.csv", csv);
  return rows;
}

}  // namespace idalab
