#pragma once

// Raw loops shared by the plain-tensor numerics and the autograd ops.

#include <cstddef>
#include <vector>

namespace adaclip::kernels {

// C (m x n) += A (m x k) . B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C (m x n) += A (m x k) . B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C (m x n) += A(k x m)^T . B (k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

// One axis of a corner-aligned bilinear resampling.
struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};
std::vector<AxisSample> corner_aligned_axis(std::size_t in_extent, std::size_t out_extent);

}  // namespace adaclip::kernels
