#pragma once

#include <span>
#include <vector>

#include "idalab/tensor.hpp"

namespace idalab {

inline constexpr double kLabelSmoothing = 0.5;

struct PseudoLabel {
  int raw_label = 0;                   // argmax p(y|x)
  double raw_confidence = 0.0;         // max p(y|x)
  int calibrated_label = 0;            // argmax p(y|x) ⊙ calibration weights
  double calibrated_confidence = 0.0;  // p(calibrated_label|x), uncalibrated probability
  bool calibrated() const { return raw_label != calibrated_label; }
};

// Class priors of both domains and the derived calibration weights.
struct LabelShiftState {
  std::vector<double> source_prior;
  std::vector<double> target_prior_estimate;
  std::vector<double> shift_metric;  // target / source, per class
  std::vector<double> weights;       // 1 / (h_m + exp(−√shift_metric))
  double h_m = 1.5;

  static LabelShiftState build(std::vector<double> source_prior, std::vector<double> target_prior_estimate, double h_m);
};

// Smoothed class frequencies (count + 0.5) / (n + 0.5·C).
std::vector<double> source_distribution(std::span<const int> labels, int num_classes);

// Smoothed frequencies of raw pseudo-labels with confidence > threshold. Falls
// back to every sample (with a warning) when none passes.
std::vector<double> estimate_target_distribution(std::span<const PseudoLabel> pseudo, double threshold,
                                                 int num_classes);

std::vector<double> shift_metric(std::span<const double> source_prior, std::span<const double> target_prior);

std::vector<double> weighting_matrix(std::span<const double> shift_metric, double h_m);

// Raw argmax labels only; calibrated fields mirror the raw ones.
std::vector<PseudoLabel> pseudo_labels(const Tensor& probs);

// Per row: raw argmax and the argmax of probs ⊙ weights, ties to the lowest index.
std::vector<PseudoLabel> calibrate(const Tensor& probs, std::span<const double> weights);

}  // namespace idalab
