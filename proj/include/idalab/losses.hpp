#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "idalab/autodiff.hpp"
#include "idalab/synthdata.hpp"

namespace idalab {

class NumericGuardError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kRatioEpsilon = 1e-8;

// Features of one domain's batch with (true or pseudo) labels and confidence weights.
struct WeightedBatch {
  Var features;
  std::vector<int> labels;
  std::vector<double> weights;

  void validate(int num_classes) const;
};

// Mean of −log(max(p[i, y_i], 1e-12)).
Var cross_entropy(const Var& probs, std::span<const int> labels);

// −(mean_src log(1 − d) + mean_tgt log(d)): binary cross-entropy with source
// labeled 0 and target labeled 1. Probabilities are floored at 1e-12 inside the logs.
Var domain_adversarial_loss(const Var& d_src, const Var& d_tgt);

// Per-domain, per-class exponential moving averages of weighted feature centroids.
class CentroidBank {
 public:
  CentroidBank(int num_classes, std::size_t dim, double ema_coeff);

  const Tensor& centroids(Domain d) const { return centroids_[slot(d)]; }
  bool initialized(Domain d, int k) const { return initialized_[slot(d)][static_cast<std::size_t>(k)]; }
  int num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }
  double ema_coeff() const { return ema_coeff_; }

  // Direct write access, used by update_centroids and for tests that need a
  // specific bank state.
  void set(Domain d, int k, std::span<const double> centroid);

 private:
  static std::size_t slot(Domain d) { return d == Domain::source ? 0 : 1; }

  int num_classes_;
  std::size_t dim_;
  double ema_coeff_;
  std::array<Tensor, 2> centroids_;
  std::array<std::vector<bool>, 2> initialized_;
};

// Bank contents after a batch update, as a K×b tape value. Rows of classes in
// the batch are differentiable through the batch features; every other row is
// a constant copy of the stored centroid.
struct CentroidEstimate {
  Var centroids;
  std::vector<bool> available;
};

// Batch centroid c_k = Σ w_i f_i / Σ w_i over class-k rows; bank row becomes
// θ·old + (1−θ)·c_k, or c_k on first sight. Classes with zero total weight are
// treated as absent.
CentroidEstimate update_centroids(CentroidBank& bank, const WeightedBatch& batch, Domain domain);

struct AlignmentLoss {
  Var value;
  // No eligible classes (centroid loss) or an empty same/different pair set
  // (feature loss); `value` is then a constant 0.
  bool degenerate = false;
};

// mean_k Φ(S_k, T_k) / (mean_{i≠k} Φ(S_i, T_k) + ε) over classes available in
// both domains. With one eligible class the numerator mean is returned alone.
AlignmentLoss centroid_alignment_loss(const CentroidEstimate& source, const CentroidEstimate& target);

// Same-label over different-label mean of √(w_s w_t)·‖f_s − f_t‖ across all
// source/target pairs.
AlignmentLoss discriminative_alignment_loss(const WeightedBatch& source, const WeightedBatch& target);

}  // namespace idalab
