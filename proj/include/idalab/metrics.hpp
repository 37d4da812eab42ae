#pragma once

#include <optional>
#include <span>
#include <vector>

#include "idalab/lsc.hpp"
#include "idalab/synthdata.hpp"
#include "idalab/trainer.hpp"

namespace idalab {

// Recall per class; nullopt for classes with no true sample.
std::vector<std::optional<double>> per_class_accuracy(std::span<const int> predictions, std::span<const int> truth,
                                                      int num_classes);

// Unweighted mean of per-class recalls over classes present in `truth`.
double per_class_mean_accuracy(std::span<const int> predictions, std::span<const int> truth, int num_classes);

struct PseudoAudit {
  double raw_accuracy = 0.0;
  double calibrated_accuracy = 0.0;
  // Over samples whose calibrated label differs from the raw one.
  std::size_t calibrated_count = 0;
  std::optional<double> subset_raw_accuracy;
  std::optional<double> subset_calibrated_accuracy;
  double calibrated_proportion = 0.0;
};

PseudoAudit pseudo_label_audit(std::span<const PseudoLabel> pseudo, const TargetLabels& truth);

std::vector<int> argmax_labels(const Tensor& probs);

// Fills the label-dependent fields of each epoch record from hidden target labels.
class AuditObserver final : public EpochObserver {
 public:
  explicit AuditObserver(TargetLabels truth) : truth_(std::move(truth)) {}
  void observe(const EpochView& view, EpochRecord& record) override;

 private:
  TargetLabels truth_;
};

}  // namespace idalab
