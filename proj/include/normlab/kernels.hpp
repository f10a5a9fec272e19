#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

// Low-level dense kernels. Every kernel exists twice: a plain serial
// reference (kernels_serial.cpp) and an OpenMP version (kernels_parallel.cpp)
// that parallelizes only over independent output elements while keeping the
// per-element accumulation order identical. The two backends therefore
// produce bit-identical results, which the test suite asserts and the
// autodiff determinism guarantees rely on.

namespace normlab::kernels {

enum class Backend { Serial, Parallel };

Backend backend();
void set_backend(Backend b);

// Elements below this count are not worth a thread team.
inline constexpr std::int64_t kParallelGrain = 16384;

enum class Unary { Neg, Relu, Sigmoid, Tanh, Exp, Log, Sqrt, Huber };
enum class Binary { Add, Sub, Mul, Div };
enum class Reduce { Sum, Mean, Var, Max };

// Iteration plan for broadcast binary ops. Strides are in elements;
// broadcast axes carry stride 0. Shapes align on trailing axes, missing
// leading axes count as extent 1.
struct BroadcastPlan {
  std::vector<std::int64_t> out_shape;
  std::vector<std::int64_t> a_stride;
  std::vector<std::int64_t> b_stride;
  std::int64_t size = 0;
  bool trivial = false;  // same shape: direct flat loop
};

// Throws ShapeError when an axis pair neither matches nor has extent 1.
BroadcastPlan make_broadcast_plan(const std::vector<std::int64_t>& a,
                                  const std::vector<std::int64_t>& b);

// Reduction plan: one output element per combination of kept axes, each
// folding its reduced subspace in ascending memory order.
struct ReducePlan {
  std::vector<std::int64_t> kept_extent, kept_stride;
  std::vector<std::int64_t> red_extent, red_stride;
  std::int64_t out_size = 1;
  std::int64_t red_size = 1;
};

ReducePlan make_reduce_plan(const std::vector<std::int64_t>& shape, const std::vector<int>& axes);

// y[i] = f(x[i]). Log validates its domain and reports the offending index.
void unary_fwd(Unary op, const double* x, double* y, std::int64_t n);

// gx[i] += gy[i] * f'(x[i])  (y = forward output, used where cheaper)
void unary_bwd(Unary op, const double* x, const double* y, const double* gy, double* gx,
               std::int64_t n);

// y = a op b under the broadcast plan. Div validates b != 0 and reports the
// offending flat output index.
void binary_fwd(Binary op, const double* a, const double* b, double* y, const BroadcastPlan& p);

// c[m,n] (+)= A·B, where A is [m,k] (or [k,m] if ta) and B is [k,n]
// (or [n,k] if tb). The contraction folds k in ascending order for every
// output element regardless of backend.
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
            std::int64_t k, bool ta, bool tb, bool accumulate);

// Reduce x into y (out_size elements). Var writes the per-output means into
// mean_ws (required for Var, ignored otherwise). `accumulate` adds into y.
void reduce_fwd(Reduce op, const double* x, double* y, const ReducePlan& p, double* mean_ws,
                bool accumulate);

// Scatter reduction gradients back: gx += d(reduce)/dx * gy.
// Var needs the forward means in mean_ws; Max re-finds the first argmax.
void reduce_bwd(Reduce op, const double* x, const double* gy, double* gx, const ReducePlan& p,
                const double* mean_ws);

// Convenience: y[i] (+)= a * x[i] + b. Used by optimizer/EMA style updates.
void axpb(const double* x, double a, double b, double* y, std::int64_t n, bool accumulate);

}  // namespace normlab::kernels
