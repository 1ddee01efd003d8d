#include "kernels.hpp"

#include <cmath>

namespace adaclip::kernels {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<AxisSample> corner_aligned_axis(std::size_t in_extent, std::size_t out_extent) {
  std::vector<AxisSample> samples(out_extent);
  for (std::size_t o = 0; o < out_extent; ++o) {
    double src = 0.0;
    if (in_extent > 1 && out_extent > 1) {
      src = static_cast<double>(o) * static_cast<double>(in_extent - 1) / static_cast<double>(out_extent - 1);
    }
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in_extent - 1) lo = in_extent - 1;
    const std::size_t hi = lo + 1 < in_extent ? lo + 1 : lo;
    samples[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return samples;
}

}  // namespace adaclip::kernels
