#include "adaclip/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip {

std::pair<double, double> softmax_pair(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) throw DomainError("softmax_pair: non-finite input");
  const double mx = std::max(a, b);
  const double ea = std::exp(a - mx);
  const double eb = std::exp(b - mx);
  const double total = ea + eb;
  return {ea / total, eb / total};
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size() || u.size() == 0) throw UsageError("cosine_similarity: length mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw DomainError("cosine_similarity: zero-norm input");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w) {
  return ag::bilinear_resize(ag::Var::constant(grid), out_h, out_w).value();
}

FiniteDiffResult finite_diff_check(const std::function<ag::Var()>& loss_fn, Parameter& p,
                                   const FiniteDiffOptions& options) {
  if (!(options.step > 0.0)) throw UsageError("finite_diff_check: step must be positive");

  p.zero_grad();
  ag::Var loss = loss_fn();
  Tensor analytic(p.value.shape());
  if (loss.requires_grad()) {
    ag::backward(loss);
    analytic = p.gradient;
  }

  std::vector<std::size_t> coords(p.value.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords && *options.max_coords < coords.size()) {
    Rng rng(options.seed);
    // Partial Fisher-Yates: the first max_coords entries become the sample.
    for (std::size_t i = 0; i < *options.max_coords; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(coords.size() - 1)));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(*options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  FiniteDiffResult result;
  for (std::size_t idx : coords) {
    const double original = p.value[idx];
    p.value[idx] = original + options.step;
    const double plus = loss_fn().value().item();
    p.value[idx] = original - options.step;
    const double minus = loss_fn().value().item();
    p.value[idx] = original;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double rel = std::abs(analytic[idx] - numeric) / std::max(options.abs_floor, std::abs(numeric));
    result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[idx] - numeric));
    if (rel > result.max_rel_error || result.coords_checked == 0) {
      result.max_rel_error = rel;
      result.worst_index = idx;
    }
    ++result.coords_checked;
  }
  p.gradient = analytic;
  return result;
}

}  // namespace adaclip
