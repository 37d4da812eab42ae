#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "idalab/tensor.hpp"

namespace idalab {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; invalidated by Tape::clear().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient accumulated by the last backward pass.
  std::span<const double> grad() const;
  Tape& tape() const;
  bool valid() const;
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index, std::uint64_t generation)
      : tape_(tape), index_(index), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
  std::uint64_t generation_ = 0;
};

// Records operations in execution order; backward() replays them in reverse.
class Tape {
 public:
  // Receives the output node (value and upstream gradient) and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf aliasing an externally owned parameter; backward() adds into param.grad().
  Var parameter(Tensor& param);
  // Owned leaf whose gradient is retained on the tape (inputs under test, features).
  Var input(Tensor value);
  // Owned leaf that never receives gradient.
  Var constant(Tensor value);

  // Records an op output; `fn` runs during backward() when requires_grad is set.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(const Var& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value_of(const Var& v) const;
  std::span<double> grad_of(const Var& v);
  bool requires_grad(const Var& v) const;
  void check(const Var& v) const;

 private:
  friend class Var;

  struct Node {
    Tensor value;  // value.grad() holds this node's accumulated gradient
    Tensor* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

// Differentiable ops. All inputs must live on the same tape.
Var matmul(const Var& a, const Var& b);
// x[n×m] + bias[1×m] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& logits);
// Natural log of max(x, floor); gradient is zero where x < floor.
Var log_floor(const Var& x, double floor);
// Identity forward; backward multiplies the upstream gradient by -coeff.
Var grad_reverse(const Var& x, double coeff);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// scale * x + shift, elementwise.
Var affine(const Var& x, double scale, double shift);
Var sum(const Var& x);
Var mean(const Var& x);
// Σ x ⊙ w with constant weights w (same shape as x); returns 1×1.
Var weighted_sum(const Var& x, const Tensor& weights);
// Quotient of two 1×1 values.
Var divide(const Var& num, const Var& den);
// x[i, index[i]] for each row, as n×1.
Var pick(const Var& x, std::span<const int> index);
// D[i,j] = ||a_i - b_j||₂; subgradient 0 where the distance is 0.
Var pairwise_distance(const Var& a, const Var& b);

// Momentum SGD: v ← momentum·v + grad; p ← p − lr·v; then grad ← 0.
void sgd_step(std::span<Tensor* const> params, double lr, double momentum,
              std::vector<Tensor>& velocity);

}  // namespace idalab
