#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "normlab/errors.hpp"

// Dense float64 tensors with define-by-run reverse-mode differentiation.
// A thread-local tape records executed operations; backward() replays it in
// reverse execution order (which is a reverse topological order) and then
// consumes it. Values are immutable after creation except for gradient
// accumulation and the explicit mutable_values() escape hatch used by the
// optimizer and running-statistics updates between graphs.

namespace normlab {

using Shape = std::vector<std::int64_t>;

namespace detail {
struct TensorData;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);
  // leaf tensor with requires_grad set
  static Tensor param(const Shape& shape, std::vector<double> values);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const;
  std::int64_t size() const;
  int rank() const;

  const std::vector<double>& values() const;
  // Optimizer / running-stat updates only; never call on a tensor that is
  // part of a live graph.
  std::vector<double>& mutable_values();
  double item() const;  // scalar tensors

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  const std::vector<double>& grad();  // allocates zeros on first access
  void zero_grad();

  // Optional axis-role annotation, e.g. "BTCS". Informational; propagated
  // through shape-preserving ops and checked by the normalization layers.
  const std::string& axes() const;
  Tensor& set_axes(std::string axes);

  std::shared_ptr<detail::TensorData> d_;  // internal
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
// SmoothL1 with threshold 1: |x|<1 ? x^2/2 : |x|-1/2
Tensor huber(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }

// ---- contraction ----
// a: [..., m, k], b: [k, n] -> [..., m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions (biased variance) ----
Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes, bool keepdims);
Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes, bool keepdims);
Tensor reduce_var(const Tensor& x, const std::vector<int>& axes, bool keepdims);
Tensor reduce_max(const Tensor& x, const std::vector<int>& axes, bool keepdims);

// ---- shape / movement ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Value copy with no tape history; gradients never flow through.
Tensor detach(const Tensor& x);

// Numerically stable softmax along one axis (max-shift is detached, which is
// exact for the gradient).
Tensor softmax(const Tensor& x, int axis);

// Accumulate gradients of all reachable requires_grad tensors, then consume
// the tape. loss must be scalar.
void backward(const Tensor& loss);

// Disables tape recording for its scope (evaluation / probes).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_recording_enabled();
std::size_t tape_size();  // test hook
void clear_tape();

}  // namespace normlab
