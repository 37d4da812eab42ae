#include "idalab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace idalab {

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape().value_of(*this); }

std::span<const double> Var::grad() const { return tape().grad_of(*this); }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw TapeError("use of an unbound Var");
  return *tape_;
}

bool Var::valid() const {
  return tape_ != nullptr && generation_ == tape_->generation_ && index_ < tape_->nodes_.size();
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this) throw TapeError("Var belongs to a different tape");
  if (v.generation_ != generation_ || v.index_ >= nodes_.size()) {
    throw TapeError("Var refers to a cleared or never-recorded tape node");
  }
}

Var Tape::parameter(Tensor& param) {
  Node node;
  node.value = param;
  node.value.zero_grad();
  node.param = &param;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::input(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.value.zero_grad();
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.value.zero_grad();
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw TapeError("backward() on a tape with no recorded forward pass");
  check(loss);
  if (nodes_[loss.index_].value.size() != 1) {
    throw TapeError("backward() needs a scalar loss, got " + nodes_[loss.index_].value.shape_string());
  }
  for (auto& node : nodes_) node.value.zero_grad();
  nodes_[loss.index_].value.grad()[0] = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.requires_grad && node.backward) node.backward(*this, node.value);
  }
  for (auto& node : nodes_) {
    if (node.param == nullptr) continue;
    auto src = node.value.grad();
    auto dst = node.param->grad();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

const Tensor& Tape::value_of(const Var& v) const {
  check(v);
  return nodes_[v.index_].value;
}

std::span<double> Tape::grad_of(const Var& v) {
  check(v);
  return nodes_[v.index_].value.grad();
}

bool Tape::requires_grad(const Var& v) const {
  check(v);
  return nodes_[v.index_].requires_grad;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&b.tape() != &t) throw TapeError("operands recorded on different tapes");
  t.check(a);
  t.check(b);
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

void require_scalar(const Tensor& t, const char* op) {
  if (t.size() != 1) throw ShapeError(std::string(op) + ": expected a scalar, got " + t.shape_string());
}

// Elementwise op whose local derivative depends on (input, output) only.
template <typename Fwd, typename Deriv>
Var elementwise(const Var& x, Fwd fwd, Deriv deriv) {
  Tape& t = x.tape();
  const Tensor& in = t.value_of(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return t.record(std::move(out), t.requires_grad(x), [x, deriv](Tape& tape, const Tensor& o) {
    const Tensor& in = tape.value_of(x);
    auto gx = tape.grad_of(x);
    auto go = o.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * deriv(in[i], o[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& A = t.value_of(a);
  const Tensor& B = t.value_of(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + A.shape_string() + " · " + B.shape_string());
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * B(p, j);
    }
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b, m, k, n](Tape& tape, const Tensor& o) {
    const Tensor& A = tape.value_of(a);
    const Tensor& B = tape.value_of(b);
    auto g = o.grad();
    if (tape.requires_grad(a)) {
      auto ga = tape.grad_of(a);  // g · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B(p, j);
          ga[i * k + p] += acc;
        }
    }
    if (tape.requires_grad(b)) {
      auto gb = tape.grad_of(b);  // Aᵀ · g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  Tape& t = common_tape(x, bias);
  const Tensor& X = t.value_of(x);
  const Tensor& Bv = t.value_of(bias);
  if (Bv.size() != X.cols()) {
    throw ShapeError("add_bias: bias " + Bv.shape_string() + " does not match columns of " + X.shape_string());
  }
  Tensor out = X;
  const std::size_t n = X.rows(), m = X.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += Bv[j];
  const bool rg = t.requires_grad(x) || t.requires_grad(bias);
  return t.record(std::move(out), rg, [x, bias, n, m](Tape& tape, const Tensor& o) {
    auto g = o.grad();
    if (tape.requires_grad(x)) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tape.requires_grad(bias)) {
      auto gb = tape.grad_of(bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  });
}

Var relu(const Var& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },  // NaN propagates
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Var log_floor(const Var& x, double floor) {
  return elementwise(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double in, double) { return in >= floor ? 1.0 / in : 0.0; });
}

Var affine(const Var& x, double scale, double shift) {
  return elementwise(
      x, [scale, shift](double v) { return scale * v + shift; }, [scale](double, double) { return scale; });
}

Var grad_reverse(const Var& x, double coeff) {
  if (coeff < 0.0) throw std::invalid_argument("grad_reverse: coefficient must be non-negative");
  return elementwise(x, [](double v) { return v; }, [coeff](double, double) { return -coeff; });
}

Var softmax_rows(const Var& logits) {
  Tape& t = logits.tape();
  const Tensor& in = t.value_of(logits);
  const std::size_t n = in.rows(), c = in.cols();
  if (c < 2) throw ShapeError("softmax_rows: need at least 2 columns, got " + in.shape_string());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = in(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(in(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  return t.record(std::move(out), t.requires_grad(logits), [logits, n, c](Tape& tape, const Tensor& o) {
    auto gx = tape.grad_of(logits);
    auto g = o.grad();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * o(i, j);
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += o(i, j) * (g[i * c + j] - dot);
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& A = t.value_of(a);
  const Tensor& B = t.value_of(b);
  require_same_shape(A, B, "add");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Tensor& o) {
    auto g = o.grad();
    for (const Var& v : {a, b}) {
      if (!tape.requires_grad(v)) continue;
      auto gv = tape.grad_of(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& A = t.value_of(a);
  const Tensor& B = t.value_of(b);
  require_same_shape(A, B, "sub");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Tensor& o) {
    auto g = o.grad();
    if (tape.requires_grad(a)) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tape.requires_grad(b)) {
      auto gb = tape.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& A = t.value_of(a);
  const Tensor& B = t.value_of(b);
  require_same_shape(A, B, "mul");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Tensor& o) {
    auto g = o.grad();
    const Tensor& A = tape.value_of(a);
    const Tensor& B = tape.value_of(b);
    if (tape.requires_grad(a)) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (tape.requires_grad(b)) {
      auto gb = tape.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var sum(const Var& x) {
  Tape& t = x.tape();
  const Tensor& in = t.value_of(x);
  double s = 0.0;
  for (double v : in.values()) s += v;
  return t.record(Tensor::scalar(s), t.requires_grad(x), [x](Tape& tape, const Tensor& o) {
    auto gx = tape.grad_of(x);
    const double g = o.grad()[0];
    for (double& v : gx) v += g;
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return affine(sum(x), 1.0 / static_cast<double>(n), 0.0);
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  Tape& t = x.tape();
  const Tensor& in = t.value_of(x);
  if (in.size() != weights.size()) {
    throw ShapeError("weighted_sum: weights " + weights.shape_string() + " vs values " + in.shape_string());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * weights[i];
  return t.record(Tensor::scalar(s), t.requires_grad(x), [x, w = weights](Tape& tape, const Tensor& o) {
    auto gx = tape.grad_of(x);
    const double g = o.grad()[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
  });
}

Var divide(const Var& num, const Var& den) {
  Tape& t = common_tape(num, den);
  const double a = t.value_of(num)[0];
  const double b = t.value_of(den)[0];
  require_scalar(t.value_of(num), "divide");
  require_scalar(t.value_of(den), "divide");
  const bool rg = t.requires_grad(num) || t.requires_grad(den);
  return t.record(Tensor::scalar(a / b), rg, [num, den, a, b](Tape& tape, const Tensor& o) {
    const double g = o.grad()[0];
    if (tape.requires_grad(num)) tape.grad_of(num)[0] += g / b;
    if (tape.requires_grad(den)) tape.grad_of(den)[0] -= g * a / (b * b);
  });
}

Var pick(const Var& x, std::span<const int> index) {
  Tape& t = x.tape();
  const Tensor& in = t.value_of(x);
  const std::size_t n = in.rows(), c = in.cols();
  if (index.size() != n) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + in.shape_string());
  }
  std::vector<std::size_t> flat(n);
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) {
      throw std::out_of_range("pick: index " + std::to_string(index[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    flat[i] = i * c + static_cast<std::size_t>(index[i]);
    out[i] = in[flat[i]];
  }
  return t.record(std::move(out), t.requires_grad(x), [x, flat = std::move(flat)](Tape& tape, const Tensor& o) {
    auto gx = tape.grad_of(x);
    auto g = o.grad();
    for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += g[i];
  });
}

Var pairwise_distance(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& A = t.value_of(a);
  const Tensor& B = t.value_of(b);
  if (A.cols() != B.cols()) {
    throw ShapeError("pairwise_distance: feature widths differ, " + A.shape_string() + " vs " + B.shape_string());
  }
  const std::size_t n = A.rows(), m = B.rows(), d = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A(i, k) - B(j, k);
        s += diff * diff;
      }
      out(i, j) = std::sqrt(s);
    }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b, n, m, d](Tape& tape, const Tensor& o) {
    const Tensor& A = tape.value_of(a);
    const Tensor& B = tape.value_of(b);
    const bool ga_on = tape.requires_grad(a), gb_on = tape.requires_grad(b);
    std::span<double> ga, gb;
    if (ga_on) ga = tape.grad_of(a);
    if (gb_on) gb = tape.grad_of(b);
    auto g = o.grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double dist = o(i, j);
        const double gij = g[i * m + j];
        if (dist == 0.0 || gij == 0.0) continue;
        const double s = gij / dist;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = s * (A(i, k) - B(j, k));
          if (ga_on) ga[i * d + k] += diff;
          if (gb_on) gb[j * d + k] -= diff;
        }
      }
  });
}

void sgd_step(std::span<Tensor* const> params, double lr, double momentum, std::vector<Tensor>& velocity) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("sgd_step: momentum must lie in [0, 1)");
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const Tensor* p : params) velocity.emplace_back(p->shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& v = velocity[k];
    if (!v.same_shape(p)) throw ShapeError("sgd_step: velocity shape " + v.shape_string() + " vs " + p.shape_string());
    auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
    p.zero_grad();
  }
}

}  // namespace idalab
