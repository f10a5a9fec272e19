// OpenMP kernels. Parallelism is only ever over independent output elements
// (rows of C, output slots of a reduction, flat elementwise indices); the
// fold order within one output element matches the serial reference exactly,
// so results are bit-identical for any thread count.

#include "kernels_backends.hpp"

namespace normlab::kernels::parallel {

void unary_fwd(Unary op, const double* x, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) y[i] = unary_eval(op, x[i]);
}

void unary_bwd(Unary op, const double* x, const double* y, const double* gy, double* gx,
               std::int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * unary_deriv(op, x[i], y[i]);
}

void binary_fwd(Binary op, const double* a, const double* b, double* y, const BroadcastPlan& p) {
  const std::int64_t n = p.size;
  if (p.trivial) {
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] = binary_eval(op, a[i], b[i]);
    return;
  }
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t ia, ib;
    broadcast_offsets(p, i, &ia, &ib);
    y[i] = binary_eval(op, a[ia], b[ib]);
  }
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
            std::int64_t k, bool ta, bool tb, bool accumulate) {
  const std::int64_t work = m * n * k;
  if (!accumulate) {
#pragma omp parallel for schedule(static) if (m * n >= kParallelGrain)
    for (std::int64_t i = 0; i < m * n; ++i) c[i] = 0.0;
  }
  if (!ta && !tb) {
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
    for (std::int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = ai[kk];
        const double* bk = b + kk * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
      }
    }
  } else if (!ta && tb) {
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
    for (std::int64_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::int64_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double acc = c[i * n + j];
        for (std::int64_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
        c[i * n + j] = acc;
      }
    }
  } else if (ta && !tb) {
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
    for (std::int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = a[kk * m + i];
        const double* bk = b + kk * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = c[i * n + j];
        for (std::int64_t kk = 0; kk < k; ++kk) acc += a[kk * m + i] * b[j * k + kk];
        c[i * n + j] = acc;
      }
    }
  }
}

void reduce_fwd(Reduce op, const double* x, double* y, const ReducePlan& p, double* mean_ws,
                bool accumulate) {
  const std::int64_t work = p.out_size * p.red_size;
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
  for (std::int64_t o = 0; o < p.out_size; ++o) {
    const std::int64_t base = reduce_base_offset(p, o);
    double acc;
    switch (op) {
      case Reduce::Sum:
      case Reduce::Mean: {
        acc = 0.0;
        for (std::int64_t r = 0; r < p.red_size; ++r) acc += x[base + reduce_sub_offset(p, r)];
        if (op == Reduce::Mean) acc /= static_cast<double>(p.red_size);
        break;
      }
      case Reduce::Var: {
        double mean = 0.0;
        for (std::int64_t r = 0; r < p.red_size; ++r) mean += x[base + reduce_sub_offset(p, r)];
        mean /= static_cast<double>(p.red_size);
        acc = 0.0;
        for (std::int64_t r = 0; r < p.red_size; ++r) {
          const double d = x[base + reduce_sub_offset(p, r)] - mean;
          acc += d * d;
        }
        acc /= static_cast<double>(p.red_size);
        mean_ws[o] = mean;
        break;
      }
      case Reduce::Max: {
        acc = x[base + reduce_sub_offset(p, 0)];
        for (std::int64_t r = 1; r < p.red_size; ++r) {
          const double v = x[base + reduce_sub_offset(p, r)];
          if (v > acc) acc = v;
        }
        break;
      }
      default: acc = 0.0; break;
    }
    if (accumulate) {
      y[o] += acc;
    } else {
      y[o] = acc;
    }
  }
}

void reduce_bwd(Reduce op, const double* x, const double* gy, double* gx, const ReducePlan& p,
                const double* mean_ws) {
  // Distinct output slots touch disjoint slices of gx, so the loop is safe.
  const double inv_n = 1.0 / static_cast<double>(p.red_size);
  const std::int64_t work = p.out_size * p.red_size;
#pragma omp parallel for schedule(static) if (work >= kParallelGrain)
  for (std::int64_t o = 0; o < p.out_size; ++o) {
    const std::int64_t base = reduce_base_offset(p, o);
    const double g = gy[o];
    switch (op) {
      case Reduce::Sum:
        for (std::int64_t r = 0; r < p.red_size; ++r) gx[base + reduce_sub_offset(p, r)] += g;
        break;
      case Reduce::Mean:
        for (std::int64_t r = 0; r < p.red_size; ++r)
          gx[base + reduce_sub_offset(p, r)] += g * inv_n;
        break;
      case Reduce::Var: {
        const double mean = mean_ws[o];
        for (std::int64_t r = 0; r < p.red_size; ++r) {
          const std::int64_t idx = base + reduce_sub_offset(p, r);
          gx[idx] += g * 2.0 * (x[idx] - mean) * inv_n;
        }
        break;
      }
      case Reduce::Max: {
        std::int64_t best = base + reduce_sub_offset(p, 0);
        double bv = x[best];
        for (std::int64_t r = 1; r < p.red_size; ++r) {
          const std::int64_t idx = base + reduce_sub_offset(p, r);
          if (x[idx] > bv) {
            bv = x[idx];
            best = idx;
          }
        }
        gx[best] += g;
        break;
      }
    }
  }
}

void axpb(const double* x, double a, double b, double* y, std::int64_t n, bool accumulate) {
  if (accumulate) {
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i] + b;
  } else {
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
    for (std::int64_t i = 0; i < n; ++i) y[i] = a * x[i] + b;
  }
}

}  // namespace normlab::kernels::parallel
