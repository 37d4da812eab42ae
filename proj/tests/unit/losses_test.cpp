#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "idalab/losses.hpp"
#include "../support/gradcheck.hpp"

using namespace idalab;
using idalab::testing::check_gradients;
using idalab::testing::random_matrix;

namespace {

double value(const Var& v) { return v.value()[0]; }

Tensor rotate_rows(const Tensor& t, double angle) {
  Tensor out = t;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out(i, 0) = std::cos(angle) * t(i, 0) - std::sin(angle) * t(i, 1);
    out(i, 1) = std::sin(angle) * t(i, 0) + std::cos(angle) * t(i, 1);
  }
  return out;
}

}  // namespace

TEST_CASE("cross entropy reference values") {
  Tape tape;
  Tensor uniform({3, 10});
  for (auto& v : uniform.values()) v = 0.1;
  CHECK(value(cross_entropy(tape.constant(uniform), std::vector<int>{0, 4, 9})) == doctest::Approx(2.302585093).epsilon(1e-9));
  CHECK(value(cross_entropy(tape.constant(Tensor::matrix(1, 2, {0.7, 0.3})), std::vector<int>{1})) ==
        doctest::Approx(1.2039728043).epsilon(1e-9));
  CHECK(value(cross_entropy(tape.constant(Tensor::matrix(1, 2, {1.0, 0.0})), std::vector<int>{0})) == 0.0);
  // floored, not infinite
  CHECK(value(cross_entropy(tape.constant(Tensor::matrix(1, 2, {1.0, 0.0})), std::vector<int>{1})) ==
        doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cross_entropy(tape.constant(Tensor::matrix(1, 2, {0.5, 0.5})), std::vector<int>{2}), std::out_of_range);
}

TEST_CASE("domain adversarial loss") {
  Tape tape;
  auto d = [&](std::initializer_list<double> v) { return tape.constant(Tensor::matrix(v.size(), 1, v)); };
  CHECK(value(domain_adversarial_loss(d({0.3}), d({0.8}))) == doctest::Approx(0.5798184953).epsilon(1e-9));
  // ln 2 per term
  CHECK(value(domain_adversarial_loss(d({0.5, 0.5}), d({0.5}))) == doctest::Approx(2 * std::numbers::ln2).epsilon(1e-12));
  CHECK(value(domain_adversarial_loss(d({0.0}), d({1.0}))) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(domain_adversarial_loss(d({1.2}), d({0.5})), NumericGuardError);
  CHECK_THROWS_AS(domain_adversarial_loss(d({0.5}), d({std::nan("")})), NumericGuardError);
}

TEST_CASE("centroid bank update") {
  Tape tape;
  CentroidBank bank(3, 2, 0.7);
  WeightedBatch first{tape.constant(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}})), {0, 0, 1}, {0.9, 0.1, 0.5}};
  auto est = update_centroids(bank, first, Domain::source);
  CHECK(est.available == std::vector<bool>{true, true, false});
  CHECK(bank.centroids(Domain::source)(0, 0) == doctest::Approx(0.9 * 1 + 0.1 * 3));
  CHECK(bank.centroids(Domain::source)(0, 1) == doctest::Approx(0.9 * 2 + 0.1 * 4));
  CHECK(bank.centroids(Domain::source)(1, 0) == 5.0);
  CHECK_FALSE(bank.initialized(Domain::target, 0));

  // class 1 absent, class 2 zero-weight: both unchanged
  WeightedBatch second{tape.constant(Tensor::from_rows({{10, 10}, {7, 7}})), {0, 2}, {1.0, 0.0}};
  update_centroids(bank, second, Domain::source);
  CHECK(bank.centroids(Domain::source)(0, 0) == doctest::Approx(0.7 * 1.2 + 0.3 * 10));
  CHECK(bank.centroids(Domain::source)(1, 1) == 6.0);
  CHECK_FALSE(bank.initialized(Domain::source, 2));

  WeightedBatch bad{tape.constant(Tensor::from_rows({{1, 1}})), {0}, {1.5}};
  CHECK_THROWS_AS(update_centroids(bank, bad, Domain::source), NumericGuardError);
}

TEST_CASE("centroid alignment reference values") {
  Tape tape;
  // same-class distances 1 and 1, cross-class distances 3 and 3
  CentroidEstimate src{tape.constant(Tensor::from_rows({{0, 0}, {0, 2}})), {true, true}};
  CentroidEstimate tgt{tape.constant(Tensor::from_rows({{std::sqrt(8.0), 1}, {-std::sqrt(8.0), 1}})), {true, true}};
  // recheck the fixture geometry rather than trusting it
  CHECK(std::hypot(std::sqrt(8.0), 1.0) == doctest::Approx(3.0));
  CentroidEstimate near_src{tape.constant(Tensor::from_rows({{0, 0}, {3, 0}})), {true, true}};
  CentroidEstimate near_tgt{tape.constant(Tensor::from_rows({{0, 1}, {3, 1}})), {true, true}};
  const double cross = std::hypot(3.0, 1.0);
  CHECK(value(centroid_alignment_loss(near_src, near_tgt).value) == doctest::Approx(1.0 / (cross + 1e-8)).epsilon(1e-12));

  // fixture with exactly (1,1) over (3,3)
  CentroidEstimate s2{tape.constant(Tensor::from_rows({{0, 0}, {0, 4}})), {true, true}};
  CentroidEstimate t2{tape.constant(Tensor::from_rows({{0, 1}, {0, 3}})), {true, true}};
  CHECK(value(centroid_alignment_loss(s2, t2).value) == doctest::Approx(1.0 / 3.0).epsilon(1e-8));

  CentroidEstimate same{tape.constant(Tensor::from_rows({{1, 1}, {5, 5}})), {true, true}};
  CHECK(value(centroid_alignment_loss(same, same).value) == 0.0);

  // one eligible class: plain numerator
  CentroidEstimate one_s{s2.centroids, {true, false}};
  CentroidEstimate one_t{t2.centroids, {true, true}};
  auto single = centroid_alignment_loss(one_s, one_t);
  CHECK_FALSE(single.degenerate);
  CHECK(value(single.value) == doctest::Approx(1.0));

  CentroidEstimate none{t2.centroids, {false, false}};
  auto empty = centroid_alignment_loss(none, one_t);
  CHECK(empty.degenerate);
  CHECK(value(empty.value) == 0.0);
  (void)src;
  (void)tgt;
}

TEST_CASE("discriminative alignment reference values") {
  Tape tape;
  WeightedBatch src{tape.constant(Tensor::from_rows({{0, 0}})), {0}, {1.0}};
  WeightedBatch tgt{tape.constant(Tensor::from_rows({{0, 1}, {3, 0}})), {0, 1}, {1.0, 0.25}};
  CHECK(value(discriminative_alignment_loss(src, tgt).value) == doctest::Approx(2.0 / 3.0).epsilon(1e-8));

  WeightedBatch disjoint{tgt.features, {1, 1}, {1.0, 1.0}};
  auto d = discriminative_alignment_loss(src, disjoint);
  CHECK(d.degenerate);
  CHECK(value(d.value) == 0.0);

  WeightedBatch coincident{tape.constant(Tensor::from_rows({{0, 0}, {3, 0}})), {0, 1}, {1.0, 1.0}};
  CHECK(value(discriminative_alignment_loss(src, coincident).value) == 0.0);
}

TEST_CASE("alignment losses are rotation invariant and weight-scale invariant") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(0.05, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor fs = random_matrix(6, 2, rng, -3, 3), ft = random_matrix(5, 2, rng, -3, 3);
    const std::vector<int> ys{0, 1, 2, 0, 1, 2}, yt{2, 1, 0, 0, 1};
    std::vector<double> ws(6), wt(5);
    for (auto& v : ws) v = w(rng);
    for (auto& v : wt) v = w(rng);
    const double angle = 0.3 + trial;

    Tape tape;
    const double dfa = value(discriminative_alignment_loss({tape.constant(fs), ys, ws}, {tape.constant(ft), yt, wt}).value);
    const double dfa_rot = value(discriminative_alignment_loss({tape.constant(rotate_rows(fs, angle)), ys, ws},
                                                               {tape.constant(rotate_rows(ft, angle)), yt, wt})
                                     .value);
    CHECK(dfa_rot == doctest::Approx(dfa).epsilon(1e-9));

    auto half = [](std::vector<double> v) {
      for (auto& x : v) x *= 0.5;
      return v;
    };
    const double dfa_scaled =
        value(discriminative_alignment_loss({tape.constant(fs), ys, half(ws)}, {tape.constant(ft), yt, half(wt)}).value);
    // exact up to the epsilon in the denominator, which does not scale
    CHECK(dfa_scaled == doctest::Approx(dfa).epsilon(1e-7));

    auto dsm = [&](const Tensor& a, const Tensor& b) {
      CentroidBank bank(3, 2, 0.7);
      auto cs = update_centroids(bank, {tape.constant(a), ys, ws}, Domain::source);
      auto ct = update_centroids(bank, {tape.constant(b), yt, wt}, Domain::target);
      return value(centroid_alignment_loss(cs, ct).value);
    };
    CHECK(dsm(rotate_rows(fs, angle), rotate_rows(ft, angle)) == doctest::Approx(dsm(fs, ft)).epsilon(1e-9));
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(19);
  const std::vector<int> ys{0, 1, 2, 1}, yt{1, 2, 0, 0, 2};
  const std::vector<double> ws{0.9, 0.4, 0.7, 1.0}, wt{0.3, 0.8, 0.6, 0.5, 1.0};
  // a bank state carried over from an earlier batch
  const Tensor history = random_matrix(3, 4, rng, -2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor fs = random_matrix(4, 4, rng, -2, 2), ft = random_matrix(5, 4, rng, -2, 2);

    auto dfa = check_gradients(
        [&](Tape&, const std::vector<Var>& v) { return discriminative_alignment_loss({v[0], ys, ws}, {v[1], yt, wt}).value; },
        {fs, ft});
    CHECK(dfa.worst_relative_error < 1e-4);

    auto dsm = check_gradients(
        [&](Tape&, const std::vector<Var>& v) {
          CentroidBank bank(3, 4, 0.7);
          for (int k = 0; k < 3; ++k) bank.set(Domain::source, k, history.row(static_cast<std::size_t>(k)));
          auto cs = update_centroids(bank, {v[0], ys, ws}, Domain::source);
          auto ct = update_centroids(bank, {v[1], yt, wt}, Domain::target);
          return centroid_alignment_loss(cs, ct).value;
        },
        {fs, ft});
    CHECK(dsm.worst_relative_error < 1e-4);

    Tensor logits = random_matrix(4, 3, rng, -2, 2);
    auto ce = check_gradients([&](Tape&, const std::vector<Var>& v) { return cross_entropy(softmax_rows(v[0]), ys); },
                              {logits});
    CHECK(ce.worst_relative_error < 1e-4);

    auto dc = check_gradients(
        [&](Tape&, const std::vector<Var>& v) { return domain_adversarial_loss(sigmoid(v[0]), sigmoid(v[1])); },
        {random_matrix(4, 1, rng, -2, 2), random_matrix(5, 1, rng, -2, 2)});
    CHECK(dc.worst_relative_error < 1e-4);
  }
}
