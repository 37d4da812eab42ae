#include "idalab/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace idalab {

std::vector<std::optional<double>> per_class_accuracy(std::span<const int> predictions, std::span<const int> truth,
                                                      int num_classes) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("predictions and labels differ in length");
  if (truth.empty()) throw std::invalid_argument("per-class accuracy of an empty set");
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<double> correct(c, 0.0), count(c, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int y = truth[i];
    if (y < 0 || y >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
      throw std::out_of_range("label outside [0, " + std::to_string(num_classes) + ")");
    }
    count[static_cast<std::size_t>(y)] += 1.0;
    correct[static_cast<std::size_t>(y)] += predictions[i] == y;
  }
  std::vector<std::optional<double>> out(c);
  for (std::size_t k = 0; k < c; ++k)
    if (count[k] > 0.0) out[k] = correct[k] / count[k];
  return out;
}

double per_class_mean_accuracy(std::span<const int> predictions, std::span<const int> truth, int num_classes) {
  double sum = 0.0;
  int present = 0;
  for (const auto& a : per_class_accuracy(predictions, truth, num_classes)) {
    if (!a) continue;
    sum += *a;
    ++present;
  }
  return sum / present;
}

PseudoAudit pseudo_label_audit(std::span<const PseudoLabel> pseudo, const TargetLabels& truth) {
  const auto labels = truth.labels();
  if (pseudo.size() != labels.size()) throw std::invalid_argument("audit: pseudo-labels and truth differ in length");
  PseudoAudit a;
  if (pseudo.empty()) return a;
  std::size_t raw_ok = 0, cal_ok = 0, sub_raw = 0, sub_cal = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const bool r = pseudo[i].raw_label == labels[i];
    const bool c = pseudo[i].calibrated_label == labels[i];
    raw_ok += r;
    cal_ok += c;
    if (pseudo[i].calibrated()) {
      ++a.calibrated_count;
      sub_raw += r;
      sub_cal += c;
    }
  }
  const auto n = static_cast<double>(pseudo.size());
  a.raw_accuracy = static_cast<double>(raw_ok) / n;
  a.calibrated_accuracy = static_cast<double>(cal_ok) / n;
  a.calibrated_proportion = static_cast<double>(a.calibrated_count) / n;
  if (a.calibrated_count > 0) {
    const auto m = static_cast<double>(a.calibrated_count);
    a.subset_raw_accuracy = static_cast<double>(sub_raw) / m;
    a.subset_calibrated_accuracy = static_cast<double>(sub_cal) / m;
  }
  return a;
}

std::vector<int> argmax_labels(const Tensor& probs) {
  std::vector<int> out;
  out.reserve(probs.rows());
  for (const auto& p : pseudo_labels(probs)) out.push_back(p.raw_label);
  return out;
}

void AuditObserver::observe(const EpochView& view, EpochRecord& record) {
  const auto audit = pseudo_label_audit(view.pseudo, truth_);
  record.raw_pseudo_accuracy = audit.raw_accuracy;
  record.calibrated_pseudo_accuracy = audit.calibrated_accuracy;
  record.subset_raw_accuracy = audit.subset_raw_accuracy;
  record.subset_calibrated_accuracy = audit.subset_calibrated_accuracy;
  record.false_pseudo_rate = 1.0 - (view.calibration_active ? audit.calibrated_accuracy : audit.raw_accuracy);

  const auto predictions = argmax_labels(view.target_probs);
  const auto per_class = per_class_accuracy(predictions, truth_.labels(), truth_.num_classes());
  record.target_per_class_accuracy.clear();
  for (const auto& a : per_class) record.target_per_class_accuracy.push_back(a.value_or(0.0));
  record.target_per_class_mean_accuracy = per_class_mean_accuracy(predictions, truth_.labels(), truth_.num_classes());
}

}  // namespace idalab
