#pragma once

// Central finite-difference oracle, independent of the tape's backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "idalab/autodiff.hpp"

namespace idalab::testing {

using ScalarGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  std::vector<std::vector<double>> analytic;
  std::vector<std::vector<double>> numeric;
  double worst_relative_error = 0.0;
};

inline double forward_value(const ScalarGraph& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value()[0];
}

// Relative error ||a - n|| / max(||a||, ||n||, tiny), per input tensor.
inline GradCheck check_gradients(const ScalarGraph& f, std::vector<Tensor> inputs, double h = 1e-5) {
  GradCheck out;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) out.analytic.emplace_back(v.grad().begin(), v.grad().end());
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> num(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = forward_value(f, inputs);
      inputs[k][i] = x0 - h;
      const double fm = forward_value(f, inputs);
      inputs[k][i] = x0;
      num[i] = (fp - fm) / (2 * h);
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < num.size(); ++i) {
      diff += std::pow(out.analytic[k][i] - num[i], 2);
      na += std::pow(out.analytic[k][i], 2);
      nn += std::pow(num[i], 2);
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    out.worst_relative_error = std::max(out.worst_relative_error, std::sqrt(diff) / denom);
    out.numeric.push_back(std::move(num));
  }
  return out;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({r, c});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace idalab::testing
