#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "idalab/tensor.hpp"

namespace idalab {

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HiddenLabelError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Domain { source, target };

std::string_view to_string(Domain d);
Domain domain_from_string(std::string_view s);

// Feature matrix plus labels. Target datasets are hidden: their labels are
// reachable only through TargetLabels, the evaluator capability.
class DomainDataset {
 public:
  DomainDataset(Domain domain, Tensor features, std::vector<int> labels, int num_classes, bool hidden);

  Domain domain() const { return domain_; }
  const Tensor& features() const { return features_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return features_.cols(); }
  bool hidden() const { return hidden_; }

  // Throws HiddenLabelError for hidden datasets.
  std::span<const int> labels() const;

  // Copy of the selected rows as an n×d tensor.
  Tensor rows(std::span<const std::size_t> index) const;

  friend bool operator==(const DomainDataset& a, const DomainDataset& b) {
    return a.domain_ == b.domain_ && a.num_classes_ == b.num_classes_ && a.hidden_ == b.hidden_ &&
           a.labels_ == b.labels_ && a.features_ == b.features_;
  }

 private:
  friend class TargetLabels;

  Domain domain_;
  Tensor features_;
  std::vector<int> labels_;
  int num_classes_;
  bool hidden_;
};

// Evaluator-only access to hidden target labels.
class TargetLabels {
 public:
  static TargetLabels reveal(const DomainDataset& ds) { return TargetLabels(ds.labels_, ds.num_classes_); }

  std::span<const int> labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const { return labels_.size(); }
  // Empirical class frequencies (unsmoothed).
  std::vector<double> distribution() const;

 private:
  TargetLabels(std::vector<int> labels, int num_classes) : labels_(std::move(labels)), num_classes_(num_classes) {}

  std::vector<int> labels_;
  int num_classes_;
};

struct ShiftSpec {
  int num_classes = 5;
  std::size_t dim = 10;
  int n_max = 300;
  double imbalance_factor = 10.0;
  // Class index at each rank; rank 0 is the head. Empty means identity (source)
  // or reversed identity (target).
  std::vector<int> source_order;
  std::vector<int> target_order;
  double rotation_angle = 0.5235987755982988;  // radians
  // Offset added to target features; empty means zero.
  std::vector<double> translation;
  double noise_sigma = 1.0;
  std::uint64_t seed = 100;

  void validate() const;
  std::vector<int> resolved_source_order() const;
  std::vector<int> resolved_target_order() const;
};

// Rank-ordered sizes round(n_max · IF^(−r/(C−1))), each at least 1.
std::vector<int> class_sizes(const ShiftSpec& spec);

// Per-class counts after assigning rank sizes through `order`.
std::vector<int> counts_by_class(std::span<const int> rank_sizes, std::span<const int> order);

// Class means before covariate shift: equally spaced on a circle of radius
// 4·noise_sigma in the first two coordinates.
Tensor class_means(const ShiftSpec& spec);

std::pair<DomainDataset, DomainDataset> generate(const ShiftSpec& spec);

// Class-balanced sampling with replacement: each slot picks a class uniformly,
// then a sample uniformly within it.
class BalancedSampler {
 public:
  BalancedSampler(const DomainDataset& ds, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();
  std::size_t batch_size() const { return batch_size_; }

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path);
// Loaded target files are hidden. `num_classes` defaults to max label + 1.
DomainDataset load_dataset(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

}  // namespace idalab
