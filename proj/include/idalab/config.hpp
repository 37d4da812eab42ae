#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "idalab/model.hpp"
#include "idalab/synthdata.hpp"
#include "idalab/trainer.hpp"
#include "json.hpp"

namespace idalab {

// Malformed or inconsistent configuration (unknown key, wrong type, bad value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Which adaptation components are switched on. All false gives source-only training.
struct AblationMask {
  bool domain_adversarial = true;
  bool centroid_alignment = true;
  bool discriminative_alignment = true;
  bool label_shift_calibration = true;

  bool any_alignment() const { return centroid_alignment || discriminative_alignment; }
  bool source_only() const { return !domain_adversarial && !any_alignment(); }
  friend bool operator==(const AblationMask&, const AblationMask&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ShiftSpec data;
  ModelConfig model;
  TrainConfig train;
  AblationMask components;
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds{100};

  // Throws ConfigError; logs a warning when calibration is on but nothing consumes pseudo-labels.
  void validate() const;
  // TrainConfig with the mask applied and the given seed.
  TrainConfig effective_train(std::uint64_t seed) const;
  // Model dimensions follow the data spec.
  ModelConfig effective_model() const;
};

void to_json(nlohmann::json& j, const ShiftSpec& s);
void from_json(const nlohmann::json& j, ShiftSpec& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AblationMask& m);
void from_json(const nlohmann::json& j, AblationMask& m);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Parses and validates a config document. Missing keys keep their defaults;
// unknown keys are rejected.
ExperimentConfig parse_experiment(const nlohmann::json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Applies `key=value` to a config document. `key` is a dotted path
// ("train.lambda") or a field name unique across sections ("lambda"). The value
// is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

}  // namespace idalab
