#include <cmath>
#include <random>

#include "doctest.h"
#include "idalab/autodiff.hpp"
#include "../support/gradcheck.hpp"

using namespace idalab;
using idalab::testing::check_gradients;
using idalab::testing::random_matrix;

TEST_CASE("matmul forward") {
  Tape tape;
  auto id = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  auto col = tape.constant(Tensor::from_rows({{3}, {4}}));
  CHECK(matmul(id, col).value() == Tensor::from_rows({{3}, {4}}));

  auto two = tape.constant(Tensor::from_rows({{2}}));
  auto zero = tape.constant(Tensor::from_rows({{0}}));
  CHECK(matmul(two, zero).value()[0] == 0.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(7);
  auto r = check_gradients([](Tape&, const std::vector<Var>& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); },
                           {random_matrix(3, 4, rng), random_matrix(4, 2, rng)});
  CHECK(r.worst_relative_error < 1e-6);
}

TEST_CASE("relu forward and gradient") {
  Tape tape;
  auto x = tape.constant(Tensor::matrix(1, 3, {-1, 0, 2}));
  CHECK(relu(x).value() == Tensor::matrix(1, 3, {0, 0, 2}));
  auto pos = tape.constant(Tensor::matrix(1, 3, {0.5, 1, 2}));
  CHECK(relu(pos).value() == pos.value());

  // subgradient at exactly zero is zero
  Tape t2;
  auto z = t2.input(Tensor::matrix(1, 2, {0.0, 1.0}));
  t2.backward(sum(relu(z)));
  CHECK(z.grad()[0] == 0.0);
  CHECK(z.grad()[1] == 1.0);

  std::mt19937_64 rng(11);
  Tensor in = random_matrix(4, 5, rng);
  for (auto& v : in.values())
    if (std::abs(v) < 1e-3) v = 0.5;
  auto r = check_gradients([](Tape&, const std::vector<Var>& v) { return sum(mul(relu(v[0]), v[0])); }, {in});
  CHECK(r.worst_relative_error < 1e-6);
}

TEST_CASE("softmax rows") {
  Tape tape;
  auto half = softmax_rows(tape.constant(Tensor::matrix(1, 2, {0, 0})));
  CHECK(half.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto big = softmax_rows(tape.constant(Tensor::matrix(1, 3, {1e300, 1e300, 1e300})));
  for (double p : big.value().values()) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto s = softmax_rows(tape.constant(Tensor::matrix(1, 3, {1, 2, 3})));
  CHECK(s.value()[0] == doctest::Approx(0.0900305731703805).epsilon(1e-12));
  CHECK(s.value()[1] == doctest::Approx(0.2447284710547977).epsilon(1e-12));
  CHECK(s.value()[2] == doctest::Approx(0.6652409557748219).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one for bounded logits") {
  std::mt19937_64 rng(3);
  Tape tape;
  auto p = softmax_rows(tape.constant(random_matrix(200, 7, rng, -100, 100)));
  for (std::size_t i = 0; i < 200; ++i) {
    double s = 0;
    for (double v : p.value().row(i)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("grad_reverse") {
  Tape tape;
  auto x = tape.input(Tensor::matrix(1, 2, {1.5, -2}));
  auto y = grad_reverse(x, 1.0);
  CHECK(y.value() == x.value());

  Tape t0;
  auto x0 = t0.input(Tensor::matrix(1, 2, {1.5, -2}));
  t0.backward(sum(grad_reverse(x0, 0.0)));
  CHECK(x0.grad()[0] == 0.0);
  CHECK(x0.grad()[1] == 0.0);

  CHECK_THROWS_AS(grad_reverse(x, -1.0), std::invalid_argument);
}

TEST_CASE("grad_reverse negates a hand-built two-layer chain") {
  // loss = sum((x·W1) reversed · W2); d loss / d x = -(W2ᵀ-summed) · W1ᵀ by hand.
  Tensor w1 = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor w2 = Tensor::from_rows({{5}, {-1}});
  Tape tape;
  auto x = tape.input(Tensor::matrix(1, 2, {0.3, -0.7}));
  auto h = matmul(x, tape.constant(w1));
  auto loss = sum(matmul(grad_reverse(h, 1.0), tape.constant(w2)));
  tape.backward(loss);
  // dL/dh = [5, -1]; reversed → [-5, 1]; dL/dx = [-5, 1]·W1ᵀ = [-5+2, -15+4]
  CHECK(x.grad()[0] == doctest::Approx(-3.0));
  CHECK(x.grad()[1] == doctest::Approx(-11.0));
}

TEST_CASE("sgd_step") {
  std::vector<Tensor> velocity;
  Tensor p = Tensor::scalar(5.0);
  p.grad()[0] = 1.0;
  std::vector<Tensor*> params{&p};
  sgd_step(params, 0.1, 0.0, velocity);
  CHECK(p[0] == doctest::Approx(4.9).epsilon(1e-15));
  CHECK(p.grad()[0] == 0.0);

  Tensor q = Tensor::scalar(0.0);
  std::vector<Tensor*> qp{&q};
  velocity.clear();
  q.grad()[0] = 1.0;
  sgd_step(qp, 0.1, 0.9, velocity);
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-15));
  q.grad()[0] = 1.0;
  sgd_step(qp, 0.1, 0.9, velocity);
  CHECK(q[0] == doctest::Approx(-0.29).epsilon(1e-15));

  sgd_step(qp, 0.1, 0.0, velocity);  // zero grad, no momentum carry-over
  CHECK(q[0] == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("backward on an unrecorded tape is an error") {
  Tape tape;
  Var unbound;
  CHECK_THROWS_AS(tape.backward(unbound), TapeError);

  auto x = tape.input(Tensor::scalar(1.0));
  tape.clear();
  CHECK_THROWS_AS(tape.backward(x), TapeError);
}

TEST_CASE("gradients accumulate over shared subgraphs") {
  Tensor w = Tensor::scalar(2.0);
  Tape tape;
  auto a = tape.parameter(w);
  auto b = tape.parameter(w);
  tape.backward(add(mul(a, a), affine(b, 3.0, 0.0)));
  CHECK(w.grad()[0] == doctest::Approx(4.0 + 3.0));
}

TEST_CASE("every differentiable op passes finite differences on 100 seeds") {
  const std::vector<std::pair<const char*, idalab::testing::ScalarGraph>> graphs = {
      {"matmul", [](Tape&, const std::vector<Var>& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); }},
      {"add_bias+relu", [](Tape&, const std::vector<Var>& v) {
         auto h = relu(add_bias(v[0], v[2]));
         return sum(mul(h, h));
       }},
      {"sigmoid+log",
       [](Tape&, const std::vector<Var>& v) { return mean(log_floor(sigmoid(v[0]), 1e-12)); }},
      {"softmax+pick", [](Tape&, const std::vector<Var>& v) {
         const std::vector<int> idx{0, 2, 1};
         return sum(log_floor(pick(softmax_rows(v[0]), idx), 1e-12));
       }},
      {"pairwise_distance+divide", [](Tape& t, const std::vector<Var>& v) {
         auto d = pairwise_distance(v[0], v[1]);
         Tensor w({3, 4}, 0.5);
         w[0] = 2.0;
         (void)t;
         return divide(weighted_sum(d, w), affine(sum(d), 1.0, 1e-8));
       }},
      {"sub+affine", [](Tape&, const std::vector<Var>& v) {
         auto d = sub(v[0], affine(v[1], 0.5, 0.25));
         return sum(mul(d, d));
       }},
  };
  for (const auto& [name, g] : graphs) {
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 4, rng), bias = random_matrix(1, 4, rng);
      if (std::string(name) == "matmul") b = random_matrix(4, 2, rng);
      if (std::string(name) == "sub+affine") b = random_matrix(3, 4, rng);
      if (std::string(name) == "add_bias+relu") {
        // keep away from relu kinks
        Tape probe;
        auto pre = add_bias(probe.constant(a), probe.constant(bias)).value();
        bool near_kink = false;
        for (double v : pre.values()) near_kink |= std::abs(v) < 1e-3;
        if (near_kink) continue;
      }
      auto r = check_gradients(g, {a, b, bias});
      worst = std::max(worst, r.worst_relative_error);
    }
    INFO(std::string(name));
    CHECK(worst < 1e-4);
  }
}
