#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the tensor primitives. Every kernel has a serial
// reference in `kernels::serial` and an OpenMP version in `kernels::omp`.
// Both compute each output element with the same summation order, so the
// results are bitwise identical; the dispatching entry points pick the
// parallel path only when the work is large enough to amortize a fork.

namespace tippo::kernels {

struct MatDims {
  std::size_t n;  // rows of the output
  std::size_t k;  // contraction length
  std::size_t m;  // cols of the output
};

// c (n x m) (+)= a (n x k) * b (k x m)
// nt: c (n x m) (+)= a (n x k) * b^T, b stored (m x k)
// tn: c (n x m) (+)= a^T * b, a stored (k x n), b stored (k x m)
namespace serial {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims dims,
            bool accumulate);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate);
// Row-wise softmax of x (rows x cols). With causal_offset >= 0, row r only
// sees columns c <= r + causal_offset; masked entries are written as 0.
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset);
}  // namespace serial

namespace omp {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims dims,
            bool accumulate);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset);
}  // namespace omp

// Multiply-adds above which the dispatchers use the OpenMP path.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims dims,
            bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               MatDims dims, bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols, long causal_offset = -1);

}  // namespace tippo::kernels
