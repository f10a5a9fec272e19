#include "normlab/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <string>

#include "kernels_backends.hpp"
#include "normlab/errors.hpp"

namespace normlab::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::Parallel
#else
    Backend::Serial
#endif
};
}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

BroadcastPlan make_broadcast_plan(const std::vector<std::int64_t>& a,
                                  const std::vector<std::int64_t>& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out_shape = a;
    p.size = 1;
    for (auto e : a) p.size *= e;
    p.trivial = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out_shape.resize(rank);
  std::vector<std::int64_t> ae(rank, 1), be(rank, 1);
  std::copy(a.begin(), a.end(), ae.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), be.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ae[i] != be[i] && ae[i] != 1 && be[i] != 1) {
      throw ShapeError("broadcast mismatch at axis " + std::to_string(i) + ": " +
                       std::to_string(ae[i]) + " vs " + std::to_string(be[i]));
    }
    p.out_shape[i] = std::max(ae[i], be[i]);
  }
  // row-major strides, zeroed on broadcast axes
  p.a_stride.assign(rank, 0);
  p.b_stride.assign(rank, 0);
  std::int64_t sa = 1, sb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    p.a_stride[i] = (ae[i] == 1) ? 0 : sa;
    p.b_stride[i] = (be[i] == 1) ? 0 : sb;
    sa *= ae[i];
    sb *= be[i];
  }
  p.size = 1;
  for (auto e : p.out_shape) p.size *= e;
  return p;
}

namespace {

// Domain checks run in the dispatch layer so both backends fail identically,
// reporting the lowest offending index.
void check_log_domain(const double* x, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0)) {
      throw DomainError("log of non-positive operand at index " + std::to_string(i));
    }
  }
}

void check_sqrt_domain(const double* x, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] < 0.0) {
      throw DomainError("sqrt of negative operand at index " + std::to_string(i));
    }
  }
}

void check_div_domain(const double* b, const BroadcastPlan& p) {
  if (p.trivial) {
    for (std::int64_t i = 0; i < p.size; ++i) {
      if (b[i] == 0.0) throw DomainError("division by zero at index " + std::to_string(i));
    }
    return;
  }
  for (std::int64_t i = 0; i < p.size; ++i) {
    std::int64_t ia, ib;
    broadcast_offsets(p, i, &ia, &ib);
    if (b[ib] == 0.0) throw DomainError("division by zero at index " + std::to_string(i));
  }
}

}  // namespace

void unary_fwd(Unary op, const double* x, double* y, std::int64_t n) {
  if (op == Unary::Log) check_log_domain(x, n);
  if (op == Unary::Sqrt) check_sqrt_domain(x, n);
  if (backend() == Backend::Parallel) {
    parallel::unary_fwd(op, x, y, n);
  } else {
    serial::unary_fwd(op, x, y, n);
  }
}

void unary_bwd(Unary op, const double* x, const double* y, const double* gy, double* gx,
               std::int64_t n) {
  if (backend() == Backend::Parallel) {
    parallel::unary_bwd(op, x, y, gy, gx, n);
  } else {
    serial::unary_bwd(op, x, y, gy, gx, n);
  }
}

void binary_fwd(Binary op, const double* a, const double* b, double* y, const BroadcastPlan& p) {
  if (op == Binary::Div) check_div_domain(b, p);
  if (backend() == Backend::Parallel) {
    parallel::binary_fwd(op, a, b, y, p);
  } else {
    serial::binary_fwd(op, a, b, y, p);
  }
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
            std::int64_t k, bool ta, bool tb, bool accumulate) {
  if (backend() == Backend::Parallel) {
    parallel::matmul(a, b, c, m, n, k, ta, tb, accumulate);
  } else {
    serial::matmul(a, b, c, m, n, k, ta, tb, accumulate);
  }
}

void reduce_fwd(Reduce op, const double* x, double* y, const ReducePlan& p, double* mean_ws,
                bool accumulate) {
  if (op == Reduce::Var && mean_ws == nullptr) {
    throw ArgumentError("reduce_fwd: Var requires a mean workspace");
  }
  if (backend() == Backend::Parallel) {
    parallel::reduce_fwd(op, x, y, p, mean_ws, accumulate);
  } else {
    serial::reduce_fwd(op, x, y, p, mean_ws, accumulate);
  }
}

void reduce_bwd(Reduce op, const double* x, const double* gy, double* gx, const ReducePlan& p,
                const double* mean_ws) {
  if (backend() == Backend::Parallel) {
    parallel::reduce_bwd(op, x, gy, gx, p, mean_ws);
  } else {
    serial::reduce_bwd(op, x, gy, gx, p, mean_ws);
  }
}

void axpb(const double* x, double a, double b, double* y, std::int64_t n, bool accumulate) {
  if (backend() == Backend::Parallel) {
    parallel::axpb(x, a, b, y, n, accumulate);
  } else {
    serial::axpb(x, a, b, y, n, accumulate);
  }
}

ReducePlan make_reduce_plan(const std::vector<std::int64_t>& shape, const std::vector<int>& axes) {
  if (axes.empty()) throw ArgumentError("reduce: empty axis set");
  const int rank = static_cast<int>(shape.size());
  std::vector<bool> reduced(rank, false);
  for (int ax : axes) {
    if (ax < 0 || ax >= rank) throw ArgumentError("reduce: axis " + std::to_string(ax) + " out of range");
    if (reduced[ax]) throw ArgumentError("reduce: duplicate axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  std::vector<std::int64_t> stride(rank, 1);
  for (int i = rank - 2; i >= 0; --i) stride[i] = stride[i + 1] * shape[i + 1];
  ReducePlan p;
  for (int i = 0; i < rank; ++i) {
    if (reduced[i]) {
      p.red_extent.push_back(shape[i]);
      p.red_stride.push_back(stride[i]);
      p.red_size *= shape[i];
    } else {
      p.kept_extent.push_back(shape[i]);
      p.kept_stride.push_back(stride[i]);
      p.out_size *= shape[i];
    }
  }
  return p;
}

}  // namespace normlab::kernels
