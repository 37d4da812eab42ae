#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "idalab/autodiff.hpp"

namespace idalab {

struct ModelConfig {
  std::size_t input_dim = 10;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t bottleneck_dim = 16;
  int num_classes = 5;
  std::vector<std::size_t> discriminator_hidden_dims{32};

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Dense {
  Tensor weight;  // fan_in × fan_out
  Tensor bias;    // 1 × fan_out
};

// Parameters of the feature extractor G, classifier F and domain discriminator D,
// plus the momentum buffers of the shared optimizer.
struct ModelState {
  ModelConfig config;
  std::uint64_t init_seed = 0;
  std::vector<Dense> extractor;
  Dense classifier;
  std::vector<Dense> discriminator;
  std::vector<Tensor> velocity;

  // G, then F, then D; the order matches `velocity`.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  void check_shapes() const;
};

// Weights ~ U(−b, b) with b = sqrt(6 / (fan_in + fan_out)); biases zero.
ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

// G: affine+relu for each hidden layer, then a final affine to the bottleneck.
Var features(Tape& tape, ModelState& state, const Var& x);
// F: affine then softmax.
Var classify(Tape& tape, ModelState& state, const Var& feats);
// D∘GRL: gradient reversal, affine+relu stack, one logit, logistic sigmoid.
// Output is the probability that a sample comes from the target domain.
Var discriminate(Tape& tape, ModelState& state, const Var& feats, double grl_coeff);

// Forward-only class probabilities for an n×d batch.
Tensor predict_proba(ModelState& state, const Tensor& x);

// JSON checkpoint; doubles are written in shortest round-trip form.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace idalab
