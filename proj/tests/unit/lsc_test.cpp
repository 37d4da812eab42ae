#include <cmath>
#include <random>

#include "doctest.h"
#include "idalab/lsc.hpp"

using namespace idalab;

namespace {

std::vector<PseudoLabel> confident(std::initializer_list<int> labels, double w) {
  std::vector<PseudoLabel> out;
  for (int y : labels) out.push_back({y, w, y, w});
  return out;
}

Tensor random_probs(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  Tensor t({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += t(i, j) = g(rng) + 1e-9;
    for (std::size_t j = 0; j < c; ++j) t(i, j) /= s;
  }
  return t;
}

}  // namespace

TEST_CASE("source distribution smoothing") {
  CHECK(source_distribution(std::vector<int>{0, 0, 1, 1}, 2) == std::vector<double>{0.5, 0.5});
  const auto p = source_distribution(std::vector<int>{0, 0, 0, 1}, 3);
  CHECK(p[0] == doctest::Approx(3.5 / 5.5));
  CHECK(p[1] == doctest::Approx(1.5 / 5.5));
  CHECK(p[2] == doctest::Approx(0.5 / 5.5));
  CHECK(p[2] > 0.0);
  CHECK_THROWS(source_distribution(std::vector<int>{}, 3));
}

TEST_CASE("target distribution estimate") {
  const auto p = estimate_target_distribution(confident({0, 0, 1, 1, 1, 2}, 0.9), 0.5, 3);
  CHECK(p[0] == doctest::Approx(2.5 / 7.5));
  CHECK(p[1] == doctest::Approx(3.5 / 7.5));
  CHECK(p[2] == doctest::Approx(1.5 / 7.5));

  // low-confidence samples are excluded
  auto mixed = confident({0, 0, 1}, 0.9);
  mixed.push_back({2, 0.4, 2, 0.4});
  const auto filtered = estimate_target_distribution(mixed, 0.5, 3);
  CHECK(filtered == estimate_target_distribution(confident({0, 0, 1}, 0.9), 0.5, 3));

  const auto low = confident({0, 1, 1, 2}, 0.3);
  CHECK(estimate_target_distribution(low, 0.5, 3) == estimate_target_distribution(low, 0.0, 3));

  const auto uniform = estimate_target_distribution(confident({0, 1, 2, 0, 1, 2}, 0.8), 0.5, 3);
  for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS(estimate_target_distribution({}, 0.5, 3));
}

TEST_CASE("shift metric and weighting matrix") {
  const auto m = shift_metric(std::vector<double>{0.8, 0.2}, std::vector<double>{0.2, 0.8});
  CHECK(m[0] == doctest::Approx(0.25));
  CHECK(m[1] == doctest::Approx(4.0));
  const auto m3 = shift_metric(std::vector<double>{0.6, 0.3, 0.1}, std::vector<double>{0.2, 0.3, 0.5});
  CHECK(m3[0] == doctest::Approx(1.0 / 3.0));
  CHECK(m3[1] == doctest::Approx(1.0));
  CHECK(m3[2] == doctest::Approx(5.0));
  CHECK_THROWS_AS(shift_metric(std::vector<double>{0.0, 1.0}, std::vector<double>{0.5, 0.5}), std::domain_error);

  const auto w = weighting_matrix(std::vector<double>{1.0, 4.0}, 1.5);
  CHECK(w[0] == doctest::Approx(0.5353664578).epsilon(1e-10));
  CHECK(w[1] == doctest::Approx(0.6114953981).epsilon(1e-10));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> log_m(std::log(1e-3), std::log(1e3));
  for (int i = 0; i < 1000; ++i) {
    const double x = std::exp(log_m(rng));
    const double v = weighting_matrix(std::vector<double>{x}, 1.5)[0];
    CHECK(v > 1.0 / 2.5);
    CHECK(v < 1.0 / 1.5);
  }
}

TEST_CASE("state build keeps the ratios") {
  const auto s = LabelShiftState::build({0.5, 0.25, 0.25}, {0.25, 0.25, 0.5}, 1.5);
  CHECK(s.shift_metric == std::vector<double>{0.5, 1.0, 2.0});
  CHECK(s.weights == weighting_matrix(s.shift_metric, 1.5));
}

TEST_CASE("calibration flips toward the up-weighted class") {
  // weights chosen so that 0.6·w0 < 0.4·w1
  const auto flipped = calibrate(Tensor::matrix(1, 2, {0.6, 0.4}), std::vector<double>{0.4, 0.65});
  CHECK(flipped[0].raw_label == 0);
  CHECK(flipped[0].raw_confidence == 0.6);
  CHECK(flipped[0].calibrated_label == 1);
  CHECK(flipped[0].calibrated_confidence == 0.4);
  CHECK(flipped[0].calibrated());

  const auto w = weighting_matrix(std::vector<double>{0.5, 2.0}, 1.5);
  CHECK(w[0] == doctest::Approx(0.5017389).epsilon(1e-7));
  CHECK(w[1] == doctest::Approx(0.5736850).epsilon(1e-7));
  const auto p = calibrate(Tensor::matrix(1, 2, {0.52, 0.48}), w);
  CHECK(p[0].calibrated_label == 1);
  CHECK(p[0].calibrated_confidence == 0.48);
  CHECK(0.52 * w[0] == doctest::Approx(0.2609042).epsilon(1e-7));
  CHECK(0.48 * w[1] == doctest::Approx(0.2753688).epsilon(1e-7));

  // ties go to the lowest index
  const auto tie = calibrate(Tensor::matrix(1, 3, {0.25, 0.5, 0.25}), std::vector<double>{2.0, 1.0, 2.0});
  CHECK(tie[0].calibrated_label == 0);
}

TEST_CASE("calibration matches brute-force enumeration") {
  std::mt19937_64 rng(21);
  const Tensor probs = random_probs(1000, 5, rng);
  const std::vector<double> w{0.45, 0.62, 0.51, 0.40001, 0.6};
  const auto got = calibrate(probs, w);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < 5; ++c)
      if (probs(i, c) * w[c] > probs(i, best) * w[best]) best = c;
    CHECK(got[i].calibrated_label == best);
    CHECK(got[i].calibrated_confidence == probs(i, static_cast<std::size_t>(best)));
    CHECK(got[i].calibrated_confidence <= got[i].raw_confidence);
  }
}

TEST_CASE("uniform shift metric never flips") {
  std::mt19937_64 rng(8);
  const Tensor probs = random_probs(2000, 4, rng);
  const auto w = weighting_matrix(std::vector<double>(4, 2.7), 1.5);
  for (const auto& p : calibrate(probs, w)) CHECK_FALSE(p.calibrated());
}

TEST_CASE("raising one shift entry never unlabels its class") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.01, 10.0);
  std::uniform_int_distribution<int> cls(0, 3);
  const Tensor probs = random_probs(200, 4, rng);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> m{u(rng), u(rng), u(rng), u(rng)};
    const int k = cls(rng);
    const auto before = calibrate(probs, weighting_matrix(m, 1.5));
    m[static_cast<std::size_t>(k)] *= 1.0 + u(rng);
    const auto after = calibrate(probs, weighting_matrix(m, 1.5));
    for (std::size_t i = 0; i < before.size(); ++i)
      if (before[i].calibrated_label == k) CHECK(after[i].calibrated_label == k);
  }
}
