#include "idalab/losses.hpp"

#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

namespace idalab {

void WeightedBatch::validate(int num_classes) const {
  const std::size_t n = features.value().rows();
  if (labels.size() != n || weights.size() != n) {
    throw ShapeError("weighted batch: " + std::to_string(n) + " rows, " + std::to_string(labels.size()) + " labels, " +
                     std::to_string(weights.size()) + " weights");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::out_of_range("weighted batch: label " + std::to_string(y) + " out of range");
  }
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0 || w > 1.0) throw NumericGuardError("weighted batch: weight outside [0, 1]");
  }
}

Var cross_entropy(const Var& probs, std::span<const int> labels) {
  const Tensor& p = probs.value();
  if (p.rows() == 0) throw ShapeError("cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.cols()) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(p.cols()) + ")");
    }
  }
  return affine(mean(log_floor(pick(probs, labels), kProbabilityFloor)), -1.0, 0.0);
}

namespace {

void guard_probabilities(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw NumericGuardError(std::string("domain_adversarial_loss: ") + what + " output " + std::to_string(v) +
                              " outside [0, 1]");
    }
  }
}

}  // namespace

Var domain_adversarial_loss(const Var& d_src, const Var& d_tgt) {
  guard_probabilities(d_src.value(), "source");
  guard_probabilities(d_tgt.value(), "target");
  Var src_term = mean(log_floor(affine(d_src, -1.0, 1.0), kProbabilityFloor));
  Var tgt_term = mean(log_floor(d_tgt, kProbabilityFloor));
  return affine(add(src_term, tgt_term), -1.0, 0.0);
}

// ---------------------------------------------------------------------------
// Centroids

CentroidBank::CentroidBank(int num_classes, std::size_t dim, double ema_coeff)
    : num_classes_(num_classes), dim_(dim), ema_coeff_(ema_coeff) {
  if (num_classes < 2) throw std::invalid_argument("centroid bank needs at least 2 classes");
  if (!(ema_coeff > 0.0 && ema_coeff <= 1.0)) throw std::invalid_argument("ema_coeff must lie in (0, 1]");
  for (std::size_t s = 0; s < 2; ++s) {
    centroids_[s] = Tensor({static_cast<std::size_t>(num_classes), dim});
    initialized_[s].assign(static_cast<std::size_t>(num_classes), false);
  }
}

void CentroidBank::set(Domain d, int k, std::span<const double> centroid) {
  if (centroid.size() != dim_) throw ShapeError("centroid width mismatch");
  auto& c = centroids_[slot(d)];
  for (std::size_t j = 0; j < dim_; ++j) c(static_cast<std::size_t>(k), j) = centroid[j];
  initialized_[slot(d)][static_cast<std::size_t>(k)] = true;
}

CentroidEstimate update_centroids(CentroidBank& bank, const WeightedBatch& batch, Domain domain) {
  batch.validate(bank.num_classes());
  Tape& tape = batch.features.tape();
  const Tensor& f = batch.features.value();
  if (f.cols() != bank.dim()) throw ShapeError("update_centroids: feature width differs from bank");
  const auto k_count = static_cast<std::size_t>(bank.num_classes());
  const std::size_t n = f.rows();
  const double theta = bank.ema_coeff();

  std::vector<double> class_weight(k_count, 0.0);
  for (std::size_t i = 0; i < n; ++i) class_weight[static_cast<std::size_t>(batch.labels[i])] += batch.weights[i];

  // new = kept + mix · features
  Tensor kept = bank.centroids(domain);
  Tensor mix({k_count, n});
  std::vector<bool> available(k_count, false);
  for (std::size_t k = 0; k < k_count; ++k) {
    const bool had = bank.initialized(domain, static_cast<int>(k));
    if (class_weight[k] > 0.0) {
      const double fresh = had ? 1.0 - theta : 1.0;
      for (std::size_t j = 0; j < bank.dim(); ++j) kept(k, j) = had ? theta * kept(k, j) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<std::size_t>(batch.labels[i]) == k) mix(k, i) = fresh * batch.weights[i] / class_weight[k];
      }
      available[k] = true;
    } else {
      available[k] = had;
    }
  }
  Var updated = add(tape.constant(std::move(kept)), matmul(tape.constant(std::move(mix)), batch.features));
  const Tensor& values = updated.value();
  for (std::size_t k = 0; k < k_count; ++k) {
    if (class_weight[k] > 0.0) bank.set(domain, static_cast<int>(k), values.row(k));
  }
  return {updated, std::move(available)};
}

AlignmentLoss centroid_alignment_loss(const CentroidEstimate& source, const CentroidEstimate& target) {
  const std::size_t k_count = source.available.size();
  if (target.available.size() != k_count) throw ShapeError("centroid_alignment_loss: class count mismatch");
  Tape& tape = source.centroids.tape();
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < k_count; ++k)
    if (source.available[k] && target.available[k]) eligible.push_back(k);
  if (eligible.empty()) {
    spdlog::debug("centroid alignment: no class has centroids in both domains; loss is 0");
    return {tape.constant(Tensor::scalar(0.0)), true};
  }

  Var dist = pairwise_distance(source.centroids, target.centroids);  // [i,k] = Φ(S_i, T_k)
  Tensor same({k_count, k_count}), cross({k_count, k_count});
  const double e = static_cast<double>(eligible.size());
  for (auto k : eligible) same(k, k) = 1.0 / e;
  Var numerator = weighted_sum(dist, same);
  if (eligible.size() < 2) return {numerator, false};

  const double pairs = e * (e - 1.0);
  for (auto i : eligible)
    for (auto k : eligible)
      if (i != k) cross(i, k) = 1.0 / pairs;
  Var denominator = affine(weighted_sum(dist, cross), 1.0, kRatioEpsilon);
  return {divide(numerator, denominator), false};
}

AlignmentLoss discriminative_alignment_loss(const WeightedBatch& source, const WeightedBatch& target) {
  const std::size_t n = source.labels.size(), m = target.labels.size();
  if (n == 0 || m == 0) throw ShapeError("discriminative_alignment_loss: empty batch");
  if (source.weights.size() != n || target.weights.size() != m) {
    throw ShapeError("discriminative_alignment_loss: weights do not match labels");
  }
  Tape& tape = source.features.tape();
  Tensor same({n, m}), diff({n, m});
  std::size_t n_same = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) n_same += source.labels[i] == target.labels[j];
  const std::size_t n_diff = n * m - n_same;
  if (n_same == 0 || n_diff == 0) {
    spdlog::debug("discriminative alignment: {} same-label and {} different-label pairs; loss is 0", n_same, n_diff);
    return {tape.constant(Tensor::scalar(0.0)), true};
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double w = std::sqrt(source.weights[i] * target.weights[j]);
      if (source.labels[i] == target.labels[j])
        same(i, j) = w / static_cast<double>(n_same);
      else
        diff(i, j) = w / static_cast<double>(n_diff);
    }
  Var dist = pairwise_distance(source.features, target.features);
  Var numerator = weighted_sum(dist, same);
  Var denominator = affine(weighted_sum(dist, diff), 1.0, kRatioEpsilon);
  return {divide(numerator, denominator), false};
}

}  // namespace idalab
