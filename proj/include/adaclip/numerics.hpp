#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>

#include "adaclip/autograd.hpp"
#include "adaclip/tensor.hpp"

namespace adaclip {

// Two-way exp-normalisation (e^a, e^b) / (e^a + e^b), computed after
// subtracting max(a, b).
std::pair<double, double> softmax_pair(double a, double b);

// dot(u, v) / (|u| |v|) clamped to [-1, 1]. Zero-norm input is a DomainError.
double cosine_similarity(const Tensor& u, const Tensor& v);

// Corner-aligned bilinear interpolation of an (h' x w') grid to
// (out_h x out_w). Output never leaves [min(grid), max(grid)].
Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w);

struct FiniteDiffOptions {
  double step = 1e-5;
  // Check a seeded random subset of this many coordinates instead of all.
  std::optional<std::size_t> max_coords;
  std::uint64_t seed = 0;
  // Denominator floor. Central differences of an O(1) loss carry roundoff
  // near 1e-16 / step = 1e-11, which swamps the relative error of gradients
  // much smaller than about 1e-6.
  double abs_floor = 1e-8;
};

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  // Largest |analytic - numeric|.
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares the reverse-mode gradient of `loss_fn` w.r.t. `p` against central
// differences. `loss_fn` must rebuild the graph from the current parameter
// values on every call. Relative error per coordinate is
// |analytic - numeric| / max(abs_floor, |numeric|). Leaves p.value unchanged and
// p.gradient holding the analytic gradient.
FiniteDiffResult finite_diff_check(const std::function<ag::Var()>& loss_fn, Parameter& p,
                                   const FiniteDiffOptions& options = {});

}  // namespace adaclip
