#pragma once

#include <cstddef>
#include <cstdint>

// Numeric inner loops shared by the tensor layer. Every kernel exists twice:
// a *_serial reference and an *_omp version parallelized over independent
// output rows/elements. Each output element is written by exactly one thread
// with a fixed accumulation order, so the two paths agree bit-for-bit at any
// thread count. The dispatching front-ends pick the parallel path when it is
// enabled and the problem is large enough to pay for the fork.
namespace ctxfuse::kernels {

void set_parallel(bool enabled);
bool parallel_enabled();

// c = op(a) * op(b), with op transposing when the flag is set.
// a is (m x k) after op, b is (k x n) after op, c is (m x n).
// When accumulate is set the product is added onto c.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n,
                   bool trans_a, bool trans_b, bool accumulate);
void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n,
                bool trans_a, bool trans_b, bool accumulate);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b, bool accumulate);

// Row-wise softmax with max-subtraction. allowed, when non-null, is a 0/1
// matrix of the same shape; disallowed entries get probability exactly 0.
// Returns false if some row has no allowed entry (out is then unspecified).
bool softmax_rows_serial(const double* x, double* out, std::size_t rows, std::size_t cols,
                         const std::uint8_t* allowed);
bool softmax_rows_omp(const double* x, double* out, std::size_t rows, std::size_t cols,
                      const std::uint8_t* allowed);
bool softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                  const std::uint8_t* allowed);

// Row-wise layer normalization. Writes normalized values xhat and the
// per-row 1/sqrt(var+eps) needed by the backward pass.
void layer_norm_rows_serial(const double* x, const double* gain, const double* bias,
                            double* out, double* xhat, double* inv_std,
                            std::size_t rows, std::size_t cols, double eps);
void layer_norm_rows_omp(const double* x, const double* gain, const double* bias,
                         double* out, double* xhat, double* inv_std,
                         std::size_t rows, std::size_t cols, double eps);
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* out, double* xhat, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps);

void relu_serial(const double* x, double* out, std::size_t n);
void relu_omp(const double* x, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);

void add_serial(const double* a, const double* b, double* out, std::size_t n);
void add_omp(const double* a, const double* b, double* out, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);

}  // namespace ctxfuse::kernels
