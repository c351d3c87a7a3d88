#include "ctxfuse/kernels.hpp"

#include <atomic>
#include <cmath>

namespace ctxfuse::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// below these sizes the omp fork costs more than the loop
constexpr std::size_t kMatmulParallelWork = 1u << 15;
constexpr std::size_t kRowParallelWork = 1u << 12;

template <bool TransA, bool TransB>
inline void matmul_rows(const double* a, const double* b, double* c,
                        std::size_t i_begin, std::size_t i_end,
                        std::size_t k, std::size_t n,
                        std::size_t lda, std::size_t ldb, bool accumulate) {
  for (std::size_t i = i_begin; i < i_end; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = TransA ? a[p * lda + i] : a[i * lda + p];
        const double bv = TransB ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      if (accumulate)
        c[i * n + j] += acc;
      else
        c[i * n + j] = acc;
    }
  }
}

inline void matmul_range(const double* a, const double* b, double* c,
                         std::size_t i_begin, std::size_t i_end,
                         std::size_t m, std::size_t k, std::size_t n,
                         bool trans_a, bool trans_b, bool accumulate) {
  // leading dimensions of the stored (untransposed) buffers
  const std::size_t lda = trans_a ? m : k;
  const std::size_t ldb = trans_b ? k : n;
  if (!trans_a && !trans_b)
    matmul_rows<false, false>(a, b, c, i_begin, i_end, k, n, lda, ldb, accumulate);
  else if (!trans_a && trans_b)
    matmul_rows<false, true>(a, b, c, i_begin, i_end, k, n, lda, ldb, accumulate);
  else if (trans_a && !trans_b)
    matmul_rows<true, false>(a, b, c, i_begin, i_end, k, n, lda, ldb, accumulate);
  else
    matmul_rows<true, true>(a, b, c, i_begin, i_end, k, n, lda, ldb, accumulate);
}

inline bool softmax_row(const double* x, double* out, std::size_t cols, const std::uint8_t* allowed) {
  double mx = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < cols; ++j) {
    if (allowed && !allowed[j]) continue;
    if (!any || x[j] > mx) mx = x[j];
    any = true;
  }
  if (!any) return false;
  double z = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (allowed && !allowed[j]) {
      out[j] = 0.0;
    } else {
      out[j] = std::exp(x[j] - mx);
      z += out[j];
    }
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
  return true;
}

inline void layer_norm_row(const double* x, const double* gain, const double* bias,
                           double* out, double* xhat, double* inv_std,
                           std::size_t cols, double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < cols; ++j) {
    xhat[j] = (x[j] - mean) * is;
    out[j] = gain[j] * xhat[j] + bias[j];
  }
}

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n,
                   bool trans_a, bool trans_b, bool accumulate) {
  matmul_range(a, b, c, 0, m, m, k, n, trans_a, trans_b, accumulate);
}

void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n,
                bool trans_a, bool trans_b, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    matmul_range(a, b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1,
                 m, k, n, trans_a, trans_b, accumulate);
  }
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b, bool accumulate) {
  if (parallel_enabled() && m * k * n >= kMatmulParallelWork && m > 1)
    matmul_omp(a, b, c, m, k, n, trans_a, trans_b, accumulate);
  else
    matmul_serial(a, b, c, m, k, n, trans_a, trans_b, accumulate);
}

bool softmax_rows_serial(const double* x, double* out, std::size_t rows, std::size_t cols,
                         const std::uint8_t* allowed) {
  bool ok = true;
  for (std::size_t i = 0; i < rows; ++i) {
    ok = softmax_row(x + i * cols, out + i * cols, cols, allowed ? allowed + i * cols : nullptr) && ok;
  }
  return ok;
}

bool softmax_rows_omp(const double* x, double* out, std::size_t rows, std::size_t cols,
                      const std::uint8_t* allowed) {
  int bad = 0;
#pragma omp parallel for schedule(static) reduction(|| : bad)
  for (long long i = 0; i < static_cast<long long>(rows); ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * cols;
    bad = !softmax_row(x + off, out + off, cols, allowed ? allowed + off : nullptr) || bad;
  }
  return !bad;
}

bool softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                  const std::uint8_t* allowed) {
  if (parallel_enabled() && rows * cols >= kRowParallelWork && rows > 1)
    return softmax_rows_omp(x, out, rows, cols, allowed);
  return softmax_rows_serial(x, out, rows, cols, allowed);
}

void layer_norm_rows_serial(const double* x, const double* gain, const double* bias,
                            double* out, double* xhat, double* inv_std,
                            std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t i = 0; i < rows; ++i) {
    layer_norm_row(x + i * cols, gain, bias, out + i * cols, xhat + i * cols, inv_std + i, cols, eps);
  }
}

void layer_norm_rows_omp(const double* x, const double* gain, const double* bias,
                         double* out, double* xhat, double* inv_std,
                         std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(rows); ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * cols;
    layer_norm_row(x + off, gain, bias, out + off, xhat + off, inv_std + i, cols, eps);
  }
}

void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* out, double* xhat, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
  if (parallel_enabled() && rows * cols >= kRowParallelWork && rows > 1)
    layer_norm_rows_omp(x, gain, bias, out, xhat, inv_std, rows, cols, eps);
  else
    layer_norm_rows_serial(x, gain, bias, out, xhat, inv_std, rows, cols, eps);
}

void relu_serial(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_omp(const double* x, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu(const double* x, double* out, std::size_t n) {
  if (parallel_enabled() && n >= kRowParallelWork)
    relu_omp(x, out, n);
  else
    relu_serial(x, out, n);
}

void add_serial(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void add_omp(const double* a, const double* b, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) out[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* out, std::size_t n) {
  if (parallel_enabled() && n >= kRowParallelWork)
    add_omp(a, b, out, n);
  else
    add_serial(a, b, out, n);
}

}  // namespace ctxfuse::kernels
