#include "idalab/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "idalab/config.hpp"
#include "json.hpp"

namespace idalab {

void ModelConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model.input_dim must be positive");
  if (bottleneck_dim < 2) throw std::invalid_argument("model.bottleneck_dim must be at least 2");
  if (num_classes < 2) throw std::invalid_argument("model.num_classes must be at least 2");
  for (auto h : hidden_dims)
    if (h == 0) throw std::invalid_argument("model.hidden_dims entries must be positive");
  for (auto h : discriminator_hidden_dims)
    if (h == 0) throw std::invalid_argument("model.discriminator_hidden_dims entries must be positive");
}

std::vector<Tensor*> ModelState::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier.weight);
  out.push_back(&classifier.bias);
  for (auto& l : discriminator) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> ModelState::parameters() const {
  auto mut = const_cast<ModelState*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

namespace {

Dense make_dense(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Dense d{Tensor({fan_in, fan_out}), Tensor({1, fan_out})};
  for (double& w : d.weight.values()) w = u(rng);
  return d;
}

void check_dense(const Dense& d, std::size_t fan_in, std::size_t fan_out) {
  if (d.weight.shape() != std::vector<std::size_t>{fan_in, fan_out} ||
      d.bias.shape() != std::vector<std::size_t>{1, fan_out}) {
    throw ShapeError("layer shapes " + d.weight.shape_string() + "/" + d.bias.shape_string() +
                     " inconsistent with model config");
  }
}

Var dense(Tape& tape, Dense& layer, const Var& x) {
  return add_bias(matmul(x, tape.parameter(layer.weight)), tape.parameter(layer.bias));
}

}  // namespace

void ModelState::check_shapes() const {
  config.validate();
  std::size_t fan_in = config.input_dim;
  if (extractor.size() != config.hidden_dims.size() + 1) throw ShapeError("extractor depth mismatch");
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    check_dense(extractor[i], fan_in, config.hidden_dims[i]);
    fan_in = config.hidden_dims[i];
  }
  check_dense(extractor.back(), fan_in, config.bottleneck_dim);
  check_dense(classifier, config.bottleneck_dim, static_cast<std::size_t>(config.num_classes));
  if (discriminator.size() != config.discriminator_hidden_dims.size() + 1) {
    throw ShapeError("discriminator depth mismatch");
  }
  fan_in = config.bottleneck_dim;
  for (std::size_t i = 0; i < config.discriminator_hidden_dims.size(); ++i) {
    check_dense(discriminator[i], fan_in, config.discriminator_hidden_dims[i]);
    fan_in = config.discriminator_hidden_dims[i];
  }
  check_dense(discriminator.back(), fan_in, 1);
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState s;
  s.config = cfg;
  s.init_seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t fan_in = cfg.input_dim;
  for (auto h : cfg.hidden_dims) {
    s.extractor.push_back(make_dense(fan_in, h, rng));
    fan_in = h;
  }
  s.extractor.push_back(make_dense(fan_in, cfg.bottleneck_dim, rng));
  s.classifier = make_dense(cfg.bottleneck_dim, static_cast<std::size_t>(cfg.num_classes), rng);
  fan_in = cfg.bottleneck_dim;
  for (auto h : cfg.discriminator_hidden_dims) {
    s.discriminator.push_back(make_dense(fan_in, h, rng));
    fan_in = h;
  }
  s.discriminator.push_back(make_dense(fan_in, 1, rng));
  return s;
}

Var features(Tape& tape, ModelState& state, const Var& x) {
  if (x.value().cols() != state.config.input_dim) {
    throw ShapeError("features: input " + x.value().shape_string() + " but model expects " +
                     std::to_string(state.config.input_dim) + " columns");
  }
  Var h = x;
  for (std::size_t i = 0; i + 1 < state.extractor.size(); ++i) h = relu(dense(tape, state.extractor[i], h));
  return dense(tape, state.extractor.back(), h);
}

Var classify(Tape& tape, ModelState& state, const Var& feats) {
  if (feats.value().cols() != state.config.bottleneck_dim) {
    throw ShapeError("classify: features " + feats.value().shape_string() + " do not match bottleneck " +
                     std::to_string(state.config.bottleneck_dim));
  }
  return softmax_rows(dense(tape, state.classifier, feats));
}

Var discriminate(Tape& tape, ModelState& state, const Var& feats, double grl_coeff) {
  if (feats.value().cols() != state.config.bottleneck_dim) {
    throw ShapeError("discriminate: features " + feats.value().shape_string() + " do not match bottleneck " +
                     std::to_string(state.config.bottleneck_dim));
  }
  Var h = grad_reverse(feats, grl_coeff);
  for (std::size_t i = 0; i + 1 < state.discriminator.size(); ++i) h = relu(dense(tape, state.discriminator[i], h));
  return sigmoid(dense(tape, state.discriminator.back(), h));
}

Tensor predict_proba(ModelState& state, const Tensor& x) {
  Tape tape;
  return classify(tape, state, features(tape, state, tape.constant(x))).value();
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("values").get<std::vector<double>>());
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  json params = json::array();
  for (const Tensor* t : state.parameters()) params.push_back(tensor_to_json(*t));
  json velocity = json::array();
  for (const Tensor& t : state.velocity) velocity.push_back(tensor_to_json(t));
  const json doc{{"format", "idalab-checkpoint"},
                 {"version", 1},
                 {"config", state.config},
                 {"init_seed", state.init_seed},
                 {"parameters", params},
                 {"velocity", velocity}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << doc.dump() << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const json doc = json::parse(in);
  if (doc.at("format") != "idalab-checkpoint" || doc.at("version") != 1) {
    throw std::runtime_error(path.string() + ": not an idalab checkpoint");
  }
  ModelState s = init_model(doc.at("config").get<ModelConfig>(), doc.at("init_seed").get<std::uint64_t>());
  auto params = s.parameters();
  const auto& stored = doc.at("parameters");
  if (stored.size() != params.size()) throw ShapeError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = tensor_from_json(stored[i]);
    if (!t.same_shape(*params[i])) throw ShapeError("checkpoint tensor " + std::to_string(i) + " has wrong shape");
    *params[i] = std::move(t);
  }
  for (const auto& v : doc.at("velocity")) s.velocity.push_back(tensor_from_json(v));
  s.check_shapes();
  return s;
}

}  // namespace idalab
