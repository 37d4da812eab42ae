#include "idalab/lsc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace idalab {

namespace {

std::vector<double> smoothed_frequencies(const std::vector<double>& counts, double total) {
  const double denom = total + kLabelSmoothing * static_cast<double>(counts.size());
  std::vector<double> p(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) p[k] = (counts[k] + kLabelSmoothing) / denom;
  return p;
}

// Index of the largest value; ties resolve to the lowest index.
template <typename Score>
int argmax_row(std::size_t cols, Score score) {
  int best = 0;
  double best_value = score(0);
  for (std::size_t j = 1; j < cols; ++j) {
    const double v = score(j);
    if (v > best_value) {
      best_value = v;
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

LabelShiftState LabelShiftState::build(std::vector<double> source_prior, std::vector<double> target_prior_estimate,
                                       double h_m) {
  LabelShiftState s;
  s.shift_metric = idalab::shift_metric(source_prior, target_prior_estimate);
  s.weights = weighting_matrix(s.shift_metric, h_m);
  s.source_prior = std::move(source_prior);
  s.target_prior_estimate = std::move(target_prior_estimate);
  s.h_m = h_m;
  return s;
}

std::vector<double> source_distribution(std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw std::invalid_argument("source_distribution: no labels");
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::out_of_range("source_distribution: label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  return smoothed_frequencies(counts, static_cast<double>(labels.size()));
}

std::vector<double> estimate_target_distribution(std::span<const PseudoLabel> pseudo, double threshold,
                                                 int num_classes) {
  if (pseudo.empty()) throw std::invalid_argument("estimate_target_distribution: no pseudo-labels");
  if (threshold < 0.0 || threshold >= 1.0) throw std::invalid_argument("confidence threshold must lie in [0, 1)");
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  double kept = 0.0;
  for (const auto& p : pseudo) {
    if (p.raw_confidence > threshold) {
      counts[static_cast<std::size_t>(p.raw_label)] += 1.0;
      kept += 1.0;
    }
  }
  if (kept == 0.0) {
    spdlog::warn("no pseudo-label exceeds confidence {}; estimating the target prior from all {} samples", threshold,
                 pseudo.size());
    for (const auto& p : pseudo) counts[static_cast<std::size_t>(p.raw_label)] += 1.0;
    kept = static_cast<double>(pseudo.size());
  }
  return smoothed_frequencies(counts, kept);
}

std::vector<double> shift_metric(std::span<const double> source_prior, std::span<const double> target_prior) {
  if (source_prior.size() != target_prior.size()) throw std::invalid_argument("shift_metric: length mismatch");
  std::vector<double> m(source_prior.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!(source_prior[k] > 0.0) || !(target_prior[k] > 0.0)) {
      throw std::domain_error("shift_metric: class " + std::to_string(k) + " has a non-positive prior");
    }
    m[k] = target_prior[k] / source_prior[k];
  }
  return m;
}

std::vector<double> weighting_matrix(std::span<const double> shift_metric, double h_m) {
  if (!(h_m > 0.0)) throw std::invalid_argument("h_m must be positive");
  std::vector<double> w(shift_metric.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (!(shift_metric[k] > 0.0)) throw std::domain_error("weighting_matrix: shift metric must be positive");
    w[k] = 1.0 / (h_m + std::exp(-std::sqrt(shift_metric[k])));
  }
  return w;
}

std::vector<PseudoLabel> pseudo_labels(const Tensor& probs) {
  const std::size_t n = probs.rows(), c = probs.cols();
  std::vector<PseudoLabel> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = argmax_row(c, [&](std::size_t j) { return probs(i, j); });
    const double w = probs(i, static_cast<std::size_t>(y));
    out[i] = {y, w, y, w};
  }
  return out;
}

std::vector<PseudoLabel> calibrate(const Tensor& probs, std::span<const double> weights) {
  const std::size_t n = probs.rows(), c = probs.cols();
  if (weights.size() != c) throw ShapeError("calibrate: " + std::to_string(weights.size()) + " weights for " + probs.shape_string());
  std::vector<PseudoLabel> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int raw = argmax_row(c, [&](std::size_t j) { return probs(i, j); });
    const int cal = argmax_row(c, [&](std::size_t j) { return probs(i, j) * weights[j]; });
    out[i] = {raw, probs(i, static_cast<std::size_t>(raw)), cal, probs(i, static_cast<std::size_t>(cal))};
  }
  return out;
}

}  // namespace idalab
