#include "tippo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tippo::kernels {

namespace {

inline double dot_strided(const double* a, std::size_t a_stride, const double* b,
                          std::size_t b_stride, std::size_t len) {
  double s = 0.0;
  for (std::size_t p = 0; p < len; ++p) s += a[p * a_stride] * b[p * b_stride];
  return s;
}

inline void matmul_row(const double* a, const double* b, double* c, MatDims d, std::size_t i,
                       bool accumulate) {
  for (std::size_t j = 0; j < d.m; ++j) {
    double s = dot_strided(a + i * d.k, 1, b + j, d.m, d.k);
    c[i * d.m + j] = accumulate ? c[i * d.m + j] + s : s;
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, MatDims d, std::size_t i,
                          bool accumulate) {
  for (std::size_t j = 0; j < d.m; ++j) {
    double s = dot_strided(a + i * d.k, 1, b + j * d.k, 1, d.k);
    c[i * d.m + j] = accumulate ? c[i * d.m + j] + s : s;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, MatDims d, std::size_t i,
                          bool accumulate) {
  for (std::size_t j = 0; j < d.m; ++j) {
    double s = dot_strided(a + i, d.n, b + j, d.m, d.k);
    c[i * d.m + j] = accumulate ? c[i * d.m + j] + s : s;
  }
}

inline void softmax_row(const double* x, double* y, std::size_t cols, std::size_t visible) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < visible; ++c) mx = std::max(mx, x[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < visible; ++c) {
    y[c] = std::exp(x[c] - mx);
    sum += y[c];
  }
  for (std::size_t c = 0; c < visible; ++c) y[c] /= sum;
  for (std::size_t c = visible; c < cols; ++c) y[c] = 0.0;
}

inline std::size_t visible_cols(std::size_t r, std::size_t cols, long causal_offset) {
  if (causal_offset < 0) return cols;
  return std::min(cols, r + static_cast<std::size_t>(causal_offset) + 1);
}

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d,
            bool accumulate) {
  for (std::size_t i = 0; i < d.n; ++i) matmul_row(a.data(), b.data(), c.data(), d, i, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  for (std::size_t i = 0; i < d.n; ++i)
    matmul_nt_row(a.data(), b.data(), c.data(), d, i, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  for (std::size_t i = 0; i < d.n; ++i)
    matmul_tn_row(a.data(), b.data(), c.data(), d, i, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset) {
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x.data() + r * cols, y.data() + r * cols, cols, visible_cols(r, cols, causal_offset));
}

}  // namespace serial

namespace omp {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d,
            bool accumulate) {
  const long n = static_cast<long>(d.n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i)
    matmul_row(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  const long n = static_cast<long>(d.n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i)
    matmul_nt_row(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  const long n = static_cast<long>(d.n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i)
    matmul_tn_row(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset) {
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < n; ++r) {
    auto row = static_cast<std::size_t>(r);
    softmax_row(x.data() + row * cols, y.data() + row * cols, cols,
                visible_cols(row, cols, causal_offset));
  }
}

}  // namespace omp

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d,
            bool accumulate) {
  if (d.n > 1 && d.n * d.k * d.m >= kParallelThreshold)
    omp::matmul(a, b, c, d, accumulate);
  else
    serial::matmul(a, b, c, d, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  if (d.n > 1 && d.n * d.k * d.m >= kParallelThreshold)
    omp::matmul_nt(a, b, c, d, accumulate);
  else
    serial::matmul_nt(a, b, c, d, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims d, bool accumulate) {
  if (d.n > 1 && d.n * d.k * d.m >= kParallelThreshold)
    omp::matmul_tn(a, b, c, d, accumulate);
  else
    serial::matmul_tn(a, b, c, d, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset) {
  if (rows > 1 && rows * cols >= kParallelThreshold)
    omp::softmax_rows(x, y, rows, cols, causal_offset);
  else
    serial::softmax_rows(x, y, rows, cols, causal_offset);
}

}  // namespace tippo::kernels
