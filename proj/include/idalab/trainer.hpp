#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "idalab/losses.hpp"
#include "idalab/lsc.hpp"
#include "idalab/model.hpp"
#include "idalab/synthdata.hpp"

namespace idalab {

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lambda = 3.0;  // centroid alignment weight
  double mu = 0.6;      // discriminative feature alignment weight
  double gamma = 1.0;   // domain adversarial weight
  double h_m = 1.5;
  int epochs = 20;
  int pretrain_epochs = 3;
  std::size_t batch_size = 50;
  double lr0 = 0.005;
  double momentum = 0.9;
  double lr_alpha = 10.0;
  double lr_beta = 0.75;
  double confidence_threshold = 0.5;
  double ema_coeff = 0.7;
  std::uint64_t seed = 100;
  bool grl_schedule = false;
  int reestimate_period = 0;  // stage-2 epochs between re-estimates; 0 = never
  bool use_lsc = true;
  // Stage-2 alignment weights: calibrated confidence w^m (true) or raw w (false).
  bool calibrated_weights = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// lr0 / (1 + alpha·p)^beta
double lr_schedule(double lr0, double progress, double alpha, double beta);
// 2 / (1 + exp(−10·p)) − 1
double grl_ramp(double progress);

struct StepLosses {
  double classification = 0.0;
  double centroid = 0.0;
  double discriminative = 0.0;
  double domain = 0.0;
  double total = 0.0;
  bool centroid_degenerate = false;
  bool discriminative_degenerate = false;
};

struct EpochRecord {
  int epoch = 0;
  int stage = 1;
  StepLosses mean_losses;
  double learning_rate = 0.0;
  double grl_coeff = 0.0;
  int centroid_degenerate_steps = 0;
  int discriminative_degenerate_steps = 0;
  // Fraction of target samples whose calibrated label differs from the raw one;
  // absent until a label-shift state exists.
  std::optional<double> calibrated_proportion;

  // Filled by an EpochObserver holding the hidden target labels.
  std::optional<double> raw_pseudo_accuracy;
  std::optional<double> calibrated_pseudo_accuracy;
  std::optional<double> subset_raw_accuracy;
  std::optional<double> subset_calibrated_accuracy;
  std::optional<double> false_pseudo_rate;
  std::optional<double> target_per_class_mean_accuracy;
  std::vector<double> target_per_class_accuracy;
};

// End-of-epoch view of the full target set.
struct EpochView {
  int epoch = 0;
  bool calibration_active = false;  // pseudo-labels used for training are calibrated
  const Tensor& target_probs;
  std::span<const PseudoLabel> pseudo;
};

class EpochObserver {
 public:
  virtual ~EpochObserver() = default;
  virtual void observe(const EpochView& view, EpochRecord& record) = 0;
};

struct TrainBatch {
  Tensor source_x;
  std::vector<int> source_y;
  Tensor target_x;
};

// One joint SGD step over G, F and D. Without `shift` the target pseudo-labels
// are raw argmax predictions (stage 1); with it they are calibrated (stage 2).
// Throws NumericFailure on a non-finite total.
StepLosses train_step(ModelState& state, const TrainBatch& batch, CentroidBank& bank, const LabelShiftState* shift,
                      const TrainConfig& cfg, double progress);

struct RunResult {
  ModelState state;
  std::vector<EpochRecord> records;
  std::optional<LabelShiftState> shift;
};

RunResult run(const DomainDataset& source, const DomainDataset& target, const ModelConfig& model_cfg,
              const TrainConfig& cfg, EpochObserver* observer = nullptr);

// Cross-entropy-only training on the same sampling and schedule as run().
ModelState run_source_only(const DomainDataset& source, std::size_t target_size, const ModelConfig& model_cfg,
                           const TrainConfig& cfg);

// Target probabilities for every sample, in dataset order.
Tensor infer(ModelState& state, const DomainDataset& ds);

}  // namespace idalab
