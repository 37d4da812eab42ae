#include "idalab/config.hpp"

#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

namespace idalab {

using nlohmann::json;

namespace {

// Each struct lists its fields once; the same list drives reading and writing.
template <typename S, typename V>
void visit(S& s, V&& v) {
  if constexpr (std::is_same_v<std::remove_const_t<S>, ShiftSpec>) {
    v("num_classes", s.num_classes);
    v("dim", s.dim);
    v("n_max", s.n_max);
    v("imbalance_factor", s.imbalance_factor);
    v("source_order", s.source_order);
    v("target_order", s.target_order);
    v("rotation_angle", s.rotation_angle);
    v("translation", s.translation);
    v("noise_sigma", s.noise_sigma);
    v("seed", s.seed);
  } else if constexpr (std::is_same_v<std::remove_const_t<S>, ModelConfig>) {
    v("input_dim", s.input_dim);
    v("hidden_dims", s.hidden_dims);
    v("bottleneck_dim", s.bottleneck_dim);
    v("num_classes", s.num_classes);
    v("discriminator_hidden_dims", s.discriminator_hidden_dims);
  } else if constexpr (std::is_same_v<std::remove_const_t<S>, TrainConfig>) {
    v("lambda", s.lambda);
    v("mu", s.mu);
    v("gamma", s.gamma);
    v("h_m", s.h_m);
    v("epochs", s.epochs);
    v("pretrain_epochs", s.pretrain_epochs);
    v("batch_size", s.batch_size);
    v("lr0", s.lr0);
    v("momentum", s.momentum);
    v("lr_alpha", s.lr_alpha);
    v("lr_beta", s.lr_beta);
    v("confidence_threshold", s.confidence_threshold);
    v("ema_coeff", s.ema_coeff);
    v("seed", s.seed);
    v("grl_schedule", s.grl_schedule);
    v("reestimate_period", s.reestimate_period);
    v("use_lsc", s.use_lsc);
    v("calibrated_weights", s.calibrated_weights);
  } else {
    static_assert(std::is_same_v<std::remove_const_t<S>, AblationMask>);
    v("domain_adversarial", s.domain_adversarial);
    v("centroid_alignment", s.centroid_alignment);
    v("discriminative_alignment", s.discriminative_alignment);
    v("label_shift_calibration", s.label_shift_calibration);
  }
}

template <typename S>
std::set<std::string> field_names() {
  std::set<std::string> names;
  S s{};
  visit(s, [&](const char* name, auto&) { names.insert(name); });
  return names;
}

void reject_unknown(const json& j, const std::set<std::string>& known, std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + std::string(section));
  }
}

template <typename S>
void write_fields(json& j, const S& s) {
  j = json::object();
  visit(s, [&](const char* name, const auto& field) { j[name] = field; });
}

template <typename S>
void read_fields(const json& j, S& s, std::string_view section) {
  reject_unknown(j, field_names<S>(), section);
  visit(s, [&](const char* name, auto& field) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(field);
    } catch (const json::exception& e) {
      throw ConfigError(std::string(section) + "." + name + ": " + e.what());
    }
  });
}

}  // namespace

void to_json(json& j, const ShiftSpec& s) { write_fields(j, s); }
void from_json(const json& j, ShiftSpec& s) { read_fields(j, s, "data"); }
void to_json(json& j, const ModelConfig& c) { write_fields(j, c); }
void from_json(const json& j, ModelConfig& c) { read_fields(j, c, "model"); }
void to_json(json& j, const TrainConfig& c) { write_fields(j, c); }
void from_json(const json& j, TrainConfig& c) { read_fields(j, c, "train"); }
void to_json(json& j, const AblationMask& m) { write_fields(j, m); }
void from_json(const json& j, AblationMask& m) { read_fields(j, m, "components"); }

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"name", c.name},     {"data", c.data},
           {"model", c.model},   {"train", c.train},
           {"components", c.components}, {"output_dir", c.output_dir.string()},
           {"seeds", c.seeds}};
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j, {"name", "data", "model", "train", "components", "output_dir", "seeds"}, "config");
  try {
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("data")) from_json(j.at("data"), c.data);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("components")) from_json(j.at("components"), c.components);
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("name must be a non-empty path component");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  try {
    data.validate();
    effective_model().validate();
    for (auto s : seeds) effective_train(s).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (components.label_shift_calibration && !components.any_alignment()) {
    spdlog::warn("label-shift calibration is enabled but no pseudo-label loss is; calibration has no effect");
  }
}

TrainConfig ExperimentConfig::effective_train(std::uint64_t seed) const {
  TrainConfig t = train;
  t.seed = seed;
  if (!components.domain_adversarial) t.gamma = 0.0;
  if (!components.centroid_alignment) t.lambda = 0.0;
  if (!components.discriminative_alignment) t.mu = 0.0;
  t.use_lsc = train.use_lsc && components.label_shift_calibration;
  return t;
}

ModelConfig ExperimentConfig::effective_model() const {
  ModelConfig m = model;
  m.input_dim = data.dim;
  m.num_classes = data.num_classes;
  return m;
}

ExperimentConfig parse_experiment(const json& doc) {
  ExperimentConfig c;
  from_json(doc, c);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment(doc);
}

namespace {

const std::vector<std::pair<std::string, std::set<std::string>>>& sections() {
  static const std::vector<std::pair<std::string, std::set<std::string>>> s{
      {"data", field_names<ShiftSpec>()},
      {"model", field_names<ModelConfig>()},
      {"train", field_names<TrainConfig>()},
      {"components", field_names<AblationMask>()},
  };
  return s;
}

}  // namespace

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value");
  std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  std::string section, field;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    field = key.substr(dot + 1);
  } else if (key == "name" || key == "output_dir" || key == "seeds") {
    doc[key] = value;
    return;
  } else {
    std::vector<std::string> matches;
    for (const auto& [name, fields] : sections())
      if (fields.count(key)) matches.push_back(name + "." + key);
    if (matches.empty()) throw ConfigError("unknown override key '" + key + "'");
    if (matches.size() > 1) {
      std::string list;
      for (const auto& m : matches) list += (list.empty() ? "" : ", ") + m;
      throw ConfigError("override key '" + key + "' is ambiguous (" + list + ")");
    }
    section = matches.front().substr(0, matches.front().find('.'));
    field = key;
  }
  const auto it = std::find_if(sections().begin(), sections().end(), [&](const auto& s) { return s.first == section; });
  if (it == sections().end() || !it->second.count(field)) throw ConfigError("unknown override key '" + key + "'");
  doc[section][field] = value;
}

}  // namespace idalab
