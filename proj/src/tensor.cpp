#include "normlab/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "normlab/kernels.hpp"

namespace normlab {

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // lazily allocated, same length as values
  bool requires_grad = false;
  int producer = -1;            // tape node that created this tensor
  std::uint64_t epoch = 0;      // tape generation the producer id refers to
  std::string axes;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorData;
using DataPtr = std::shared_ptr<TensorData>;

namespace {

struct TapeNode {
  std::function<void()> backprop;
  std::vector<int> parents;  // producer node ids of grad-requiring inputs
};

struct Tape {
  std::vector<TapeNode> nodes;
  std::uint64_t epoch = 1;
  bool recording = true;

  void clear() {
    nodes.clear();
    ++epoch;
  }
};

thread_local Tape t_tape;

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) {
    if (e <= 0) throw ShapeError("non-positive extent " + std::to_string(e));
    n *= e;
  }
  return n;
}

DataPtr alloc(const Shape& shape) {
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->values.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
  return d;
}

Tensor wrap(DataPtr d) {
  Tensor t;
  t.d_ = std::move(d);
  return t;
}

// Record a tape node for `out` if recording is on and any input requires
// grad. Inputs produced under an earlier (cleared) tape act as constants.
void record(std::initializer_list<DataPtr> inputs, const DataPtr& out,
            std::function<void()> backprop) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (!t_tape.recording || !needs) return;
  out->requires_grad = true;
  TapeNode node;
  node.backprop = std::move(backprop);
  for (const auto& in : inputs) {
    if (in->requires_grad && in->producer >= 0 && in->epoch == t_tape.epoch) {
      node.parents.push_back(in->producer);
    }
  }
  out->producer = static_cast<int>(t_tape.nodes.size());
  out->epoch = t_tape.epoch;
  t_tape.nodes.push_back(std::move(node));
}

// gx += gy summed over the axes `operand` was broadcast along.
void accumulate_broadcast_grad(const std::vector<double>& gy, const Shape& out_shape,
                               const DataPtr& operand) {
  operand->ensure_grad();
  if (operand->shape == out_shape) {
    kernels::axpb(gy.data(), 1.0, 0.0, operand->grad.data(), operand->size(), true);
    return;
  }
  // axes where the operand had extent 1 (incl. left-padded ranks)
  const int rank = static_cast<int>(out_shape.size());
  const int op_rank = static_cast<int>(operand->shape.size());
  std::vector<int> axes;
  for (int i = 0; i < rank; ++i) {
    const std::int64_t ext = (i < rank - op_rank) ? 1 : operand->shape[i - (rank - op_rank)];
    if (ext == 1 && out_shape[i] != 1) axes.push_back(i);
  }
  if (axes.empty()) {  // same element count, e.g. [1,n] vs [n]
    kernels::axpb(gy.data(), 1.0, 0.0, operand->grad.data(), operand->size(), true);
    return;
  }
  auto plan = kernels::make_reduce_plan(out_shape, axes);
  kernels::reduce_fwd(kernels::Reduce::Sum, gy.data(), operand->grad.data(), plan, nullptr, true);
}

std::string elementwise_axes(const DataPtr& a, const DataPtr& b, const Shape& out_shape) {
  if (a->axes.size() == out_shape.size()) return a->axes;
  if (b && b->axes.size() == out_shape.size()) return b->axes;
  return {};
}

}  // namespace

// ---- Tensor basics ----

Tensor Tensor::zeros(const Shape& shape) { return wrap(alloc(shape)); }

Tensor Tensor::full(const Shape& shape, double value) {
  auto d = alloc(shape);
  std::fill(d->values.begin(), d->values.end(), value);
  return wrap(d);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  if (static_cast<std::int64_t>(values.size()) != shape_size(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape product " + std::to_string(shape_size(shape)));
  }
  d->values = std::move(values);
  return wrap(d);
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::param(const Shape& shape, std::vector<double> values) {
  Tensor t = from(shape, std::move(values));
  t.d_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return d_->shape; }
std::int64_t Tensor::size() const { return d_->size(); }
int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }
const std::vector<double>& Tensor::values() const { return d_->values; }
std::vector<double>& Tensor::mutable_values() { return d_->values; }

double Tensor::item() const {
  if (size() != 1) throw ArgumentError("item() on tensor of size " + std::to_string(size()));
  return d_->values[0];
}

bool Tensor::requires_grad() const { return d_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  d_->requires_grad = flag;
  return *this;
}

const std::vector<double>& Tensor::grad() {
  d_->ensure_grad();
  return d_->grad;
}

void Tensor::zero_grad() {
  d_->ensure_grad();
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

const std::string& Tensor::axes() const { return d_->axes; }

Tensor& Tensor::set_axes(std::string axes) {
  if (!axes.empty() && axes.size() != d_->shape.size()) {
    throw ArgumentError("axes annotation length does not match rank");
  }
  d_->axes = std::move(axes);
  return *this;
}

// ---- elementwise ----

namespace {

Tensor binary_op(kernels::Binary op, const Tensor& a, const Tensor& b) {
  auto plan = kernels::make_broadcast_plan(a.shape(), b.shape());
  auto out = alloc(plan.out_shape);
  kernels::binary_fwd(op, a.values().data(), b.values().data(), out->values.data(), plan);
  out->axes = elementwise_axes(a.d_, b.d_, plan.out_shape);

  DataPtr ad = a.d_, bd = b.d_, od = out;
  switch (op) {
    case kernels::Binary::Add:
      record({ad, bd}, od, [ad, bd, od]() {
        if (ad->requires_grad) accumulate_broadcast_grad(od->grad, od->shape, ad);
        if (bd->requires_grad) accumulate_broadcast_grad(od->grad, od->shape, bd);
      });
      break;
    case kernels::Binary::Sub:
      record({ad, bd}, od, [ad, bd, od]() {
        if (ad->requires_grad) accumulate_broadcast_grad(od->grad, od->shape, ad);
        if (bd->requires_grad) {
          std::vector<double> neg(od->grad.size());
          kernels::unary_fwd(kernels::Unary::Neg, od->grad.data(), neg.data(),
                             static_cast<std::int64_t>(neg.size()));
          accumulate_broadcast_grad(neg, od->shape, bd);
        }
      });
      break;
    case kernels::Binary::Mul:
      record({ad, bd}, od, [ad, bd, od]() {
        if (ad->requires_grad) {
          auto p = kernels::make_broadcast_plan(od->shape, bd->shape);
          std::vector<double> t(od->grad.size());
          kernels::binary_fwd(kernels::Binary::Mul, od->grad.data(), bd->values.data(), t.data(), p);
          accumulate_broadcast_grad(t, od->shape, ad);
        }
        if (bd->requires_grad) {
          auto p = kernels::make_broadcast_plan(od->shape, ad->shape);
          std::vector<double> t(od->grad.size());
          kernels::binary_fwd(kernels::Binary::Mul, od->grad.data(), ad->values.data(), t.data(), p);
          accumulate_broadcast_grad(t, od->shape, bd);
        }
      });
      break;
    case kernels::Binary::Div:
      record({ad, bd}, od, [ad, bd, od]() {
        auto pb = kernels::make_broadcast_plan(od->shape, bd->shape);
        if (ad->requires_grad) {
          std::vector<double> t(od->grad.size());
          kernels::binary_fwd(kernels::Binary::Div, od->grad.data(), bd->values.data(), t.data(), pb);
          accumulate_broadcast_grad(t, od->shape, ad);
        }
        if (bd->requires_grad) {
          // -gy * a / b^2, reduced onto b
          auto pa = kernels::make_broadcast_plan(od->shape, ad->shape);
          std::vector<double> t(od->grad.size());
          kernels::binary_fwd(kernels::Binary::Mul, od->grad.data(), ad->values.data(), t.data(), pa);
          std::vector<double> u(od->grad.size());
          kernels::binary_fwd(kernels::Binary::Div, t.data(), bd->values.data(), u.data(), pb);
          kernels::binary_fwd(kernels::Binary::Div, u.data(), bd->values.data(), t.data(), pb);
          kernels::unary_fwd(kernels::Unary::Neg, t.data(), t.data(),
                             static_cast<std::int64_t>(t.size()));
          accumulate_broadcast_grad(t, od->shape, bd);
        }
      });
      break;
  }
  return wrap(out);
}

Tensor unary_op(kernels::Unary op, const Tensor& x) {
  auto out = alloc(x.shape());
  kernels::unary_fwd(op, x.values().data(), out->values.data(), x.size());
  out->axes = x.axes();
  DataPtr xd = x.d_, od = out;
  record({xd}, od, [op, xd, od]() {
    if (!xd->requires_grad) return;
    xd->ensure_grad();
    kernels::unary_bwd(op, xd->values.data(), od->values.data(), od->grad.data(),
                       xd->grad.data(), xd->size());
  });
  return wrap(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(kernels::Binary::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(kernels::Binary::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(kernels::Binary::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(kernels::Binary::Div, a, b); }
Tensor neg(const Tensor& x) { return unary_op(kernels::Unary::Neg, x); }
Tensor relu(const Tensor& x) { return unary_op(kernels::Unary::Relu, x); }
Tensor sigmoid(const Tensor& x) { return unary_op(kernels::Unary::Sigmoid, x); }
Tensor tanh(const Tensor& x) { return unary_op(kernels::Unary::Tanh, x); }
Tensor exp(const Tensor& x) { return unary_op(kernels::Unary::Exp, x); }
Tensor log(const Tensor& x) { return unary_op(kernels::Unary::Log, x); }
Tensor sqrt(const Tensor& x) { return unary_op(kernels::Unary::Sqrt, x); }
Tensor huber(const Tensor& x) { return unary_op(kernels::Unary::Huber, x); }

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2) throw ShapeError("matmul: left operand must have rank >= 2");
  if (b.rank() != 2) throw ShapeError("matmul: right operand must have rank 2");
  const std::int64_t k = a.shape()[a.rank() - 1];
  if (k != b.shape()[0]) {
    throw ShapeError("matmul: inner extents " + std::to_string(k) + " vs " +
                     std::to_string(b.shape()[0]));
  }
  const std::int64_t n = b.shape()[1];
  const std::int64_t rows = a.size() / k;  // leading dims x m, b is shared
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  auto out = alloc(out_shape);
  kernels::matmul(a.values().data(), b.values().data(), out->values.data(), rows, n, k, false,
                  false, false);
  DataPtr ad = a.d_, bd = b.d_, od = out;
  record({ad, bd}, od, [ad, bd, od, rows, n, k]() {
    if (ad->requires_grad) {
      ad->ensure_grad();
      // gA += G . B^T
      kernels::matmul(od->grad.data(), bd->values.data(), ad->grad.data(), rows, k, n, false,
                      true, true);
    }
    if (bd->requires_grad) {
      bd->ensure_grad();
      // gB += A^T . G
      kernels::matmul(ad->values.data(), od->grad.data(), bd->grad.data(), k, n, rows, true,
                      false, true);
    }
  });
  return wrap(out);
}

// ---- reductions ----

namespace {

Tensor reduce_op(kernels::Reduce op, const Tensor& x, const std::vector<int>& axes,
                 bool keepdims) {
  auto plan = kernels::make_reduce_plan(x.shape(), axes);
  Shape out_shape;
  std::string out_axes;
  std::vector<bool> reduced(x.rank(), false);
  for (int ax : axes) reduced[ax] = true;
  for (int i = 0; i < x.rank(); ++i) {
    if (reduced[i]) {
      if (keepdims) {
        out_shape.push_back(1);
        if (!x.axes().empty()) out_axes.push_back(x.axes()[i]);
      }
    } else {
      out_shape.push_back(x.shape()[i]);
      if (!x.axes().empty()) out_axes.push_back(x.axes()[i]);
    }
  }
  auto out = alloc(out_shape);
  auto means = std::make_shared<std::vector<double>>();
  if (op == kernels::Reduce::Var) means->assign(plan.out_size, 0.0);
  kernels::reduce_fwd(op, x.values().data(), out->values.data(), plan,
                      op == kernels::Reduce::Var ? means->data() : nullptr, false);
  if (!x.axes().empty()) out->axes = out_axes;
  DataPtr xd = x.d_, od = out;
  record({xd}, od, [op, xd, od, plan, means]() {
    if (!xd->requires_grad) return;
    xd->ensure_grad();
    kernels::reduce_bwd(op, xd->values.data(), od->grad.data(), xd->grad.data(), plan,
                        op == kernels::Reduce::Var ? means->data() : nullptr);
  });
  return wrap(out);
}

}  // namespace

Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  return reduce_op(kernels::Reduce::Sum, x, axes, keepdims);
}
Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  return reduce_op(kernels::Reduce::Mean, x, axes, keepdims);
}
Tensor reduce_var(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  return reduce_op(kernels::Reduce::Var, x, axes, keepdims);
}
Tensor reduce_max(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  return reduce_op(kernels::Reduce::Max, x, axes, keepdims);
}

// ---- movement ----

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: element count mismatch");
  }
  auto out = alloc(shape);
  out->values = x.values();
  DataPtr xd = x.d_, od = out;
  record({xd}, od, [xd, od]() {
    if (!xd->requires_grad) return;
    xd->ensure_grad();
    kernels::axpb(od->grad.data(), 1.0, 0.0, xd->grad.data(), xd->size(), true);
  });
  return wrap(out);
}

namespace {

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// dst[i] = src[map(i)] where map applies the permutation. Used for both
// forward and (with the inverse perm) backward; accumulate for grads.
void permute_copy(const double* src, const Shape& src_shape, const std::vector<int>& perm,
                  double* dst, bool accumulate) {
  const int rank = static_cast<int>(src_shape.size());
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = src_shape[perm[i]];
  auto src_strides = row_major_strides(src_shape);
  std::int64_t n = 1;
  for (auto e : out_shape) n *= e;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t rem = flat, off = 0;
    for (int d = rank - 1; d >= 0; --d) {
      const std::int64_t c = rem % out_shape[d];
      rem /= out_shape[d];
      off += c * src_strides[perm[d]];
    }
    if (accumulate) {
      dst[flat] += src[off];
    } else {
      dst[flat] = src[off];
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) throw ArgumentError("permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw ArgumentError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  auto out = alloc(out_shape);
  permute_copy(x.values().data(), x.shape(), perm, out->values.data(), false);
  if (!x.axes().empty()) {
    std::string ax(rank, 'x');
    for (int i = 0; i < rank; ++i) ax[i] = x.axes()[perm[i]];
    out->axes = ax;
  }
  DataPtr xd = x.d_, od = out;
  std::vector<int> inv(rank);
  for (int i = 0; i < rank; ++i) inv[perm[i]] = i;
  record({xd}, od, [xd, od, inv]() {
    if (!xd->requires_grad) return;
    xd->ensure_grad();
    permute_copy(od->grad.data(), od->shape, inv, xd->grad.data(), true);
  });
  return wrap(out);
}

namespace {

// Iterate [outer, axis extent, inner] blocks for slice/concat.
struct AxisBlocks {
  std::int64_t outer, extent, inner;
};

AxisBlocks axis_blocks(const Shape& s, int axis) {
  AxisBlocks b{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) b.outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) b.inner *= s[i];
  return b;
}

}  // namespace

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  if (axis < 0 || axis >= x.rank()) throw ArgumentError("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > x.shape()[axis]) {
    throw ArgumentError("slice: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") out of bounds");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  auto out = alloc(out_shape);
  const auto b = axis_blocks(x.shape(), axis);
  const double* src = x.values().data();
  double* dst = out->values.data();
  for (std::int64_t o = 0; o < b.outer; ++o) {
    const double* s = src + (o * b.extent + start) * b.inner;
    double* t = dst + o * len * b.inner;
    std::copy(s, s + len * b.inner, t);
  }
  out->axes = x.axes();
  DataPtr xd = x.d_, od = out;
  record({xd}, od, [xd, od, b, axis, start, len]() {
    if (!xd->requires_grad) return;
    xd->ensure_grad();
    for (std::int64_t o = 0; o < b.outer; ++o) {
      const double* g = od->grad.data() + o * len * b.inner;
      double* t = xd->grad.data() + (o * b.extent + start) * b.inner;
      for (std::int64_t i = 0; i < len * b.inner; ++i) t[i] += g[i];
    }
  });
  return wrap(out);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw ArgumentError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != out_shape[i]) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(i));
      }
    }
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  auto out = alloc(out_shape);
  const auto ob = axis_blocks(out_shape, axis);
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t ext = p.shape()[axis];
    const double* src = p.values().data();
    for (std::int64_t o = 0; o < ob.outer; ++o) {
      double* dst = out->values.data() + (o * ob.extent + offset) * ob.inner;
      std::copy(src + o * ext * ob.inner, src + (o + 1) * ext * ob.inner, dst);
    }
    offset += ext;
  }
  out->axes = parts[0].axes();
  std::vector<DataPtr> ins;
  ins.reserve(parts.size());
  for (const auto& p : parts) ins.push_back(p.d_);
  DataPtr od = out;
  // record() wants an initializer_list; build the node manually for n-ary.
  bool needs = false;
  for (const auto& in : ins) needs = needs || in->requires_grad;
  if (grad_recording_enabled() && needs) {
    od->requires_grad = true;
    TapeNode node;
    for (const auto& in : ins) {
      if (in->requires_grad && in->producer >= 0 && in->epoch == t_tape.epoch) {
        node.parents.push_back(in->producer);
      }
    }
    node.backprop = [ins, od, ob, axis]() {
      std::int64_t off = 0;
      for (const auto& in : ins) {
        const std::int64_t ext = in->shape[axis];
        if (in->requires_grad) {
          in->ensure_grad();
          for (std::int64_t o = 0; o < ob.outer; ++o) {
            const double* g = od->grad.data() + (o * ob.extent + off) * ob.inner;
            double* t = in->grad.data() + o * ext * ob.inner;
            for (std::int64_t i = 0; i < ext * ob.inner; ++i) t[i] += g[i];
          }
        }
        off += ext;
      }
    };
    od->producer = static_cast<int>(t_tape.nodes.size());
    od->epoch = t_tape.epoch;
    t_tape.nodes.push_back(std::move(node));
  }
  return wrap(out);
}

Tensor detach(const Tensor& x) {
  auto out = std::make_shared<TensorData>();
  out->shape = x.shape();
  out->values = x.values();
  out->axes = x.axes();
  return wrap(out);
}

Tensor softmax(const Tensor& x, int axis) {
  Tensor shift = detach(reduce_max(x, {axis}, true));
  Tensor e = exp(sub(x, shift));
  Tensor s = reduce_sum(e, {axis}, true);
  return div(e, s);
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ArgumentError("backward: loss must be scalar, got size " + std::to_string(loss.size()));
  }
  DataPtr ld = loss.d_;
  if (!ld->requires_grad) {
    t_tape.clear();
    return;
  }
  ld->ensure_grad();
  ld->grad[0] += 1.0;
  if (ld->producer >= 0 && ld->epoch == t_tape.epoch) {
    const int start = ld->producer;
    std::vector<bool> needed(start + 1, false);
    needed[start] = true;
    for (int id = start; id >= 0; --id) {
      if (!needed[id]) continue;
      auto& node = t_tape.nodes[id];
      node.backprop();
      for (int p : node.parents) needed[p] = true;
    }
  }
  t_tape.clear();
}

NoGradGuard::NoGradGuard() : saved_(t_tape.recording) { t_tape.recording = false; }
NoGradGuard::~NoGradGuard() { t_tape.recording = saved_; }

bool grad_recording_enabled() { return t_tape.recording; }
std::size_t tape_size() { return t_tape.nodes.size(); }
void clear_tape() { t_tape.clear(); }

}  // namespace normlab
