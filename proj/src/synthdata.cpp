#include "idalab/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace idalab {

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw DatasetFormatError("unknown domain tag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// DomainDataset

DomainDataset::DomainDataset(Domain domain, Tensor features, std::vector<int> labels, int num_classes, bool hidden)
    : domain_(domain),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      hidden_(hidden) {
  if (num_classes_ < 2) throw ParameterError("dataset needs at least 2 classes");
  if (labels_.empty()) throw ParameterError("empty dataset");
  if (features_.rank() != 2 || features_.rows() != labels_.size()) {
    throw ShapeError("features " + features_.shape_string() + " do not match " + std::to_string(labels_.size()) +
                     " labels");
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) {
      throw ParameterError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
  if (labels_.size() < static_cast<std::size_t>(num_classes_)) {
    throw ParameterError("dataset has fewer samples than declared classes");
  }
}

std::span<const int> DomainDataset::labels() const {
  if (hidden_) throw HiddenLabelError("target labels are hidden from training code");
  return labels_;
}

Tensor DomainDataset::rows(std::span<const std::size_t> index) const {
  const std::size_t d = dim();
  Tensor out({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = features_.row(index[i]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<double> TargetLabels::distribution() const {
  std::vector<double> p(static_cast<std::size_t>(num_classes_), 0.0);
  for (int y : labels_) p[static_cast<std::size_t>(y)] += 1.0;
  for (double& v : p) v /= static_cast<double>(labels_.size());
  return p;
}

// ---------------------------------------------------------------------------
// ShiftSpec

namespace {

void check_permutation(const std::vector<int>& order, int c, const char* name) {
  if (order.size() != static_cast<std::size_t>(c)) {
    throw ParameterError(std::string(name) + " must list every class exactly once");
  }
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (int k = 0; k < c; ++k) {
    if (sorted[static_cast<std::size_t>(k)] != k) throw ParameterError(std::string(name) + " is not a permutation");
  }
}

}  // namespace

void ShiftSpec::validate() const {
  if (num_classes < 2) throw ParameterError("num_classes must be at least 2");
  if (dim < 2) throw ParameterError("dim must be at least 2");
  if (n_max < num_classes) throw ParameterError("n_max must be at least num_classes");
  if (!(imbalance_factor >= 1.0)) throw ParameterError("imbalance_factor must be >= 1");
  if (!(noise_sigma > 0.0)) throw ParameterError("noise_sigma must be positive");
  if (!std::isfinite(rotation_angle)) throw ParameterError("rotation_angle must be finite");
  if (!translation.empty() && translation.size() != dim) {
    throw ParameterError("translation length must equal dim");
  }
  if (!source_order.empty()) check_permutation(source_order, num_classes, "source_order");
  if (!target_order.empty()) check_permutation(target_order, num_classes, "target_order");
}

std::vector<int> ShiftSpec::resolved_source_order() const {
  if (!source_order.empty()) return source_order;
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

std::vector<int> ShiftSpec::resolved_target_order() const {
  if (!target_order.empty()) return target_order;
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.rbegin(), order.rend(), 0);
  return order;
}

std::vector<int> class_sizes(const ShiftSpec& spec) {
  if (spec.num_classes < 2) throw ParameterError("num_classes must be at least 2");
  if (spec.n_max < spec.num_classes) throw ParameterError("n_max must be at least num_classes");
  if (!(spec.imbalance_factor >= 1.0)) throw ParameterError("imbalance_factor must be >= 1");
  const int c = spec.num_classes;
  std::vector<int> sizes(static_cast<std::size_t>(c));
  for (int r = 0; r < c; ++r) {
    const double exponent = -static_cast<double>(r) / static_cast<double>(c - 1);
    const double n = static_cast<double>(spec.n_max) * std::pow(spec.imbalance_factor, exponent);
    sizes[static_cast<std::size_t>(r)] = std::max(1, static_cast<int>(std::lround(n)));
  }
  return sizes;
}

std::vector<int> counts_by_class(std::span<const int> rank_sizes, std::span<const int> order) {
  std::vector<int> counts(rank_sizes.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r) counts[static_cast<std::size_t>(order[r])] = rank_sizes[r];
  return counts;
}

Tensor class_means(const ShiftSpec& spec) {
  const auto c = static_cast<std::size_t>(spec.num_classes);
  Tensor means({c, spec.dim});
  const double radius = 4.0 * spec.noise_sigma;
  for (std::size_t k = 0; k < c; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(c);
    means(k, 0) = radius * std::cos(angle);
    means(k, 1) = radius * std::sin(angle);
  }
  return means;
}

namespace {

DomainDataset draw_domain(const ShiftSpec& spec, Domain domain, std::span<const int> counts, std::mt19937_64& rng) {
  const Tensor means = class_means(spec);
  const std::size_t d = spec.dim;
  const std::size_t n = static_cast<std::size_t>(std::accumulate(counts.begin(), counts.end(), 0));
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);

  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), static_cast<std::size_t>(counts[k]), static_cast<int>(k));
  std::shuffle(labels.begin(), labels.end(), rng);

  Tensor x({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) x(i, j) = means(k, j) + noise(rng);
  }
  if (domain == Domain::target) {
    const double cs = std::cos(spec.rotation_angle), sn = std::sin(spec.rotation_angle);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = x(i, 0), b = x(i, 1);
      x(i, 0) = cs * a - sn * b;
      x(i, 1) = sn * a + cs * b;
      if (!spec.translation.empty())
        for (std::size_t j = 0; j < d; ++j) x(i, j) += spec.translation[j];
    }
  }
  return DomainDataset(domain, std::move(x), std::move(labels), spec.num_classes, domain == Domain::target);
}

}  // namespace

std::pair<DomainDataset, DomainDataset> generate(const ShiftSpec& spec) {
  spec.validate();
  const auto sizes = class_sizes(spec);
  const auto src_order = spec.resolved_source_order();
  const auto tgt_order = spec.resolved_target_order();
  std::seed_seq src_seq{spec.seed, std::uint64_t{0}};
  std::seed_seq tgt_seq{spec.seed, std::uint64_t{1}};
  std::mt19937_64 src_rng(src_seq), tgt_rng(tgt_seq);
  auto source = draw_domain(spec, Domain::source, counts_by_class(sizes, src_order), src_rng);
  auto target = draw_domain(spec, Domain::target, counts_by_class(sizes, tgt_order), tgt_rng);
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// BalancedSampler

BalancedSampler::BalancedSampler(const DomainDataset& ds, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (ds.num_classes() < 2) throw ParameterError("balanced sampling needs at least 2 classes");
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  if (ds.domain() != Domain::source) throw ParameterError("balanced sampling is defined on the labeled source domain");
  by_class_.resize(static_cast<std::size_t>(ds.num_classes()));
  const auto labels = ds.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) by_class_[static_cast<std::size_t>(labels[i])].push_back(i);
  for (std::size_t k = 0; k < by_class_.size(); ++k) {
    if (by_class_[k].empty()) throw ParameterError("class " + std::to_string(k) + " has no source samples");
  }
}

std::vector<std::size_t> BalancedSampler::next() {
  std::uniform_int_distribution<std::size_t> pick_class(0, by_class_.size() - 1);
  std::vector<std::size_t> batch(batch_size_);
  for (auto& slot : batch) {
    const auto& members = by_class_[pick_class(rng_)];
    std::uniform_int_distribution<std::size_t> pick_member(0, members.size() - 1);
    slot = members[pick_member(rng_)];
  }
  return batch;
}

// ---------------------------------------------------------------------------
// CSV persistence

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "domain,label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << '\n';
  const auto revealed = TargetLabels::reveal(ds);
  const auto labels = revealed.labels();
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << to_string(ds.domain()) << ',' << labels[i];
    for (double v : ds.features().row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DatasetFormatError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

DomainDataset load_dataset(const std::filesystem::path& path, std::optional<int> num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetFormatError("line 1: missing header");
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "domain" || header[1] != "label") {
    throw DatasetFormatError("line 1: header must start with domain,label,f0");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 2] != "f" + std::to_string(j)) {
      throw DatasetFormatError("line 1: expected column f" + std::to_string(j));
    }
  }

  std::optional<Domain> domain;
  std::vector<int> labels;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != d + 2) {
      throw DatasetFormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(d + 2) +
                               " fields, got " + std::to_string(fields.size()));
    }
    Domain row_domain;
    try {
      row_domain = domain_from_string(fields[0]);
    } catch (const DatasetFormatError& e) {
      throw DatasetFormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (domain && *domain != row_domain) {
      throw DatasetFormatError("line " + std::to_string(line_no) + ": mixed domains in one file");
    }
    domain = row_domain;
    const int y = parse_number<int>(fields[1], line_no);
    if (y < 0 || (num_classes && y >= *num_classes)) {
      throw ParameterError("line " + std::to_string(line_no) + ": label " + std::to_string(y) + " out of range");
    }
    labels.push_back(y);
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_number<double>(fields[j + 2], line_no));
  }
  if (labels.empty()) throw DatasetFormatError(path.string() + ": dataset has no rows");
  const int c = num_classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  const std::size_t n = labels.size();
  return DomainDataset(*domain, Tensor({n, d}, std::move(values)), std::move(labels), c, *domain == Domain::target);
}

}  // namespace idalab
