#pragma once

// Internal: per-backend entry points plus the scalar math shared by both so
// the backends differ only in loop scheduling.

#include <cmath>

#include "normlab/kernels.hpp"

namespace normlab::kernels {

inline double unary_eval(Unary op, double x) {
  switch (op) {
    case Unary::Neg: return -x;
    case Unary::Relu: return x > 0.0 ? x : 0.0;
    case Unary::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Unary::Tanh: return std::tanh(x);
    case Unary::Exp: return std::exp(x);
    case Unary::Log: return std::log(x);
    case Unary::Sqrt: return std::sqrt(x);
    case Unary::Huber: {
      const double a = std::fabs(x);
      return a < 1.0 ? 0.5 * x * x : a - 0.5;
    }
  }
  return 0.0;
}

// derivative in terms of input x and forward output y
inline double unary_deriv(Unary op, double x, double y) {
  switch (op) {
    case Unary::Neg: return -1.0;
    case Unary::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Unary::Sigmoid: return y * (1.0 - y);
    case Unary::Tanh: return 1.0 - y * y;
    case Unary::Exp: return y;
    case Unary::Log: return 1.0 / x;
    case Unary::Sqrt: return 0.5 / y;
    case Unary::Huber: return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
  }
  return 0.0;
}

inline double binary_eval(Binary op, double a, double b) {
  switch (op) {
    case Binary::Add: return a + b;
    case Binary::Sub: return a - b;
    case Binary::Mul: return a * b;
    case Binary::Div: return a / b;
  }
  return 0.0;
}

// Decompose a flat output index into operand offsets under a broadcast plan.
inline void broadcast_offsets(const BroadcastPlan& p, std::int64_t flat, std::int64_t* ia,
                              std::int64_t* ib) {
  std::int64_t a = 0, b = 0;
  for (std::size_t d = p.out_shape.size(); d-- > 0;) {
    const std::int64_t c = flat % p.out_shape[d];
    flat /= p.out_shape[d];
    a += c * p.a_stride[d];
    b += c * p.b_stride[d];
  }
  *ia = a;
  *ib = b;
}

// Base offset in x of the o-th output element of a reduction.
inline std::int64_t reduce_base_offset(const ReducePlan& p, std::int64_t o) {
  std::int64_t off = 0;
  for (std::size_t d = p.kept_extent.size(); d-- > 0;) {
    off += (o % p.kept_extent[d]) * p.kept_stride[d];
    o /= p.kept_extent[d];
  }
  return off;
}

// Offset of the r-th element of the reduced subspace (ascending odometer).
inline std::int64_t reduce_sub_offset(const ReducePlan& p, std::int64_t r) {
  std::int64_t off = 0;
  for (std::size_t d = p.red_extent.size(); d-- > 0;) {
    off += (r % p.red_extent[d]) * p.red_stride[d];
    r /= p.red_extent[d];
  }
  return off;
}

namespace serial {
void unary_fwd(Unary op, const double* x, double* y, std::int64_t n);
void unary_bwd(Unary op, const double* x, const double* y, const double* gy, double* gx,
               std::int64_t n);
void binary_fwd(Binary op, const double* a, const double* b, double* y, const BroadcastPlan& p);
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
            std::int64_t k, bool ta, bool tb, bool accumulate);
void reduce_fwd(Reduce op, const double* x, double* y, const ReducePlan& p, double* mean_ws,
                bool accumulate);
void reduce_bwd(Reduce op, const double* x, const double* gy, double* gx, const ReducePlan& p,
                const double* mean_ws);
void axpb(const double* x, double a, double b, double* y, std::int64_t n, bool accumulate);
}  // namespace serial

namespace parallel {
void unary_fwd(Unary op, const double* x, double* y, std::int64_t n);
void unary_bwd(Unary op, const double* x, const double* y, const double* gy, double* gx,
               std::int64_t n);
void binary_fwd(Binary op, const double* a, const double* b, double* y, const BroadcastPlan& p);
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
            std::int64_t k, bool ta, bool tb, bool accumulate);
void reduce_fwd(Reduce op, const double* x, double* y, const ReducePlan& p, double* mean_ws,
                bool accumulate);
void reduce_bwd(Reduce op, const double* x, const double* gy, double* gx, const ReducePlan& p,
                const double* mean_ws);
void axpb(const double* x, double a, double b, double* y, std::int64_t n, bool accumulate);
}  // namespace parallel

}  // namespace normlab::kernels
