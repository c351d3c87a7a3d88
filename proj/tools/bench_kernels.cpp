// Compares the serial reference kernels against the OpenMP versions: checks
// bit-identical outputs, then reports wall times over a few shapes.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "ctxfuse/kernels.hpp"
#include "ctxfuse/rng.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double time_of(const std::function<void()>& f, int reps) {
  f();  // warm-up
  const auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  using namespace ctxfuse;

  std::printf("%-28s %12s %12s %8s %s\n", "kernel", "serial_s", "omp_s", "speedup",
              "bit_equal");

  Rng rng(12345);
  for (const std::size_t n : {64UL, 128UL, 256UL}) {
    std::vector<double> a(n * n), b(n * n), c1(n * n), c2(n * n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();

    const double ts = time_of(
        [&] { kernels::matmul_serial(a.data(), b.data(), c1.data(), n, n, n, false, false, false); },
        5);
    const double tp = time_of(
        [&] { kernels::matmul_omp(a.data(), b.data(), c2.data(), n, n, n, false, false, false); },
        5);
    const bool equal = std::memcmp(c1.data(), c2.data(), n * n * sizeof(double)) == 0;
    char name[64];
    std::snprintf(name, sizeof(name), "matmul %zux%zux%zu", n, n, n);
    std::printf("%-28s %12.6f %12.6f %8.2f %s\n", name, ts, tp, ts / tp,
                equal ? "yes" : "NO");
  }

  for (const std::size_t rows : {64UL, 512UL}) {
    const std::size_t cols = 256;
    std::vector<double> x(rows * cols), o1(rows * cols), o2(rows * cols);
    for (auto& v : x) v = rng.normal();
    const double ts =
        time_of([&] { kernels::softmax_rows_serial(x.data(), o1.data(), rows, cols, nullptr); }, 20);
    const double tp =
        time_of([&] { kernels::softmax_rows_omp(x.data(), o2.data(), rows, cols, nullptr); }, 20);
    const bool equal = std::memcmp(o1.data(), o2.data(), rows * cols * sizeof(double)) == 0;
    char name[64];
    std::snprintf(name, sizeof(name), "softmax_rows %zux%zu", rows, cols);
    std::printf("%-28s %12.6f %12.6f %8.2f %s\n", name, ts, tp, ts / tp,
                equal ? "yes" : "NO");
  }

  for (const std::size_t rows : {64UL, 512UL}) {
    const std::size_t cols = 256;
    std::vector<double> x(rows * cols), gain(cols, 1.0), bias(cols, 0.0);
    std::vector<double> o1(rows * cols), o2(rows * cols), xh(rows * cols), is(rows);
    for (auto& v : x) v = rng.normal();
    const double ts = time_of(
        [&] {
          kernels::layer_norm_rows_serial(x.data(), gain.data(), bias.data(), o1.data(), xh.data(),
                                          is.data(), rows, cols, 1e-5);
        },
        20);
    const double tp = time_of(
        [&] {
          kernels::layer_norm_rows_omp(x.data(), gain.data(), bias.data(), o2.data(), xh.data(),
                                       is.data(), rows, cols, 1e-5);
        },
        20);
    const bool equal = std::memcmp(o1.data(), o2.data(), rows * cols * sizeof(double)) == 0;
    char name[64];
    std::snprintf(name, sizeof(name), "layer_norm_rows %zux%zu", rows, cols);
    std::printf("%-28s %12.6f %12.6f %8.2f %s\n", name, ts, tp, ts / tp,
                equal ? "yes" : "NO");
  }

  return 0;
}
