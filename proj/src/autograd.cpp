#include "adaclip/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "adaclip/errors.hpp"
#include "kernels.hpp"

namespace adaclip::ag {

Tensor& Node::grad() {
  if (!grad_allocated_) {
    grad_ = Tensor(value().shape());
    grad_allocated_ = true;
  }
  return grad_;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->owned = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->external = &p.value;
  node->param = &p;
  node->requires_grad = p.trainable;
  return Var(std::move(node));
}

Var Var::view(const Tensor& t) {
  auto node = std::make_shared<Node>();
  node->external = &t;
  return Var(std::move(node));
}

const Tensor& Var::value() const {
  if (!node_) throw UsageError("Var: use of an undefined variable");
  return node_->value();
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->owned = std::move(value);
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->backward_fn = std::move(fn);
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined() || !loss.requires_grad()) {
    throw UsageError("backward: loss is not connected to any trainable parameter");
  }
  if (loss.value().size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_to_string(loss.shape()));
  }

  // Iterative post-order DFS over nodes that require gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Node gradients are per call; a leaf shared with an earlier graph must not
  // carry the old value in.
  for (Node* node : order) node->clear_grad();
  loss.node()->grad().fill(1.0);
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || !node->has_grad()) continue;
    in_values.clear();
    in_grads.clear();
    for (auto& in : node->inputs) {
      in_values.push_back(&in->value());
      in_grads.push_back(in->requires_grad ? &in->grad() : nullptr);
    }
    node->backward_fn(node->value(), node->grad(), in_values, in_grads);
  }

  for (Node* node : order) {
    if (node->param == nullptr || !node->has_grad()) continue;
    Parameter& p = *node->param;
    if (p.gradient.shape() != p.value.shape()) p.gradient = Tensor(p.value.shape());
    auto dst = p.gradient.data();
    auto src = node->grad().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    p.has_gradient = true;
  }
  for (Node* node : order) node->clear_grad();
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw UsageError(std::string(op) + ": expected a matrix, got " + shape_to_string(a.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_op(std::move(out), {a, b},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   accumulate(gi[0], g);
                   accumulate(gi[1], g);
                 });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return make_op(std::move(out), {a, b},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   accumulate(gi[0], g);
                   accumulate(gi[1], g, -1.0);
                 });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return make_op(std::move(out), {a, b},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   const auto gv = g.data();
                   for (int side = 0; side < 2; ++side) {
                     if (!gi[side]) continue;
                     auto d = gi[side]->data();
                     const auto other = in[1 - side]->data();
                     for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * other[i];
                   }
                 });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return make_op(std::move(out), {a},
                 [s](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   accumulate(gi[0], g, s);
                 });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("add_n: empty input");
  Tensor out = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(xs.front(), xs[k], "add_n");
    auto o = out.data();
    auto v = xs[k].value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
  }
  return make_op(std::move(out), xs,
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   for (Tensor* d : gi) accumulate(d, g);
                 });
}

Var mean_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("mean_n: empty input");
  return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k) {
    throw UsageError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " . " +
                     shape_to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  kernels::gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make_op(std::move(out), {a, b},
                 [m, k, n](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                           std::span<Tensor* const> gi) {
                   if (gi[0]) kernels::gemm_nt(g.data().data(), in[1]->data().data(), gi[0]->data().data(), m, n, k);
                   if (gi[1]) kernels::gemm_tn(in[0]->data().data(), g.data().data(), gi[1]->data().data(), k, m, n);
                 });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  if (b.value().cols() != k) {
    throw UsageError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) + " . " +
                     shape_to_string(b.shape()) + "^T");
  }
  Tensor out(Shape{m, n});
  kernels::gemm_nt(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make_op(std::move(out), {a, b},
                 [m, k, n](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                           std::span<Tensor* const> gi) {
                   if (gi[0]) kernels::gemm_nn(g.data().data(), in[1]->data().data(), gi[0]->data().data(), m, n, k);
                   if (gi[1]) kernels::gemm_tn(g.data().data(), in[0]->data().data(), gi[1]->data().data(), n, m, k);
                 });
}

Var add_bias(const Var& x, const Var& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.shape() != Shape{n}) {
    throw UsageError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  }
  Tensor out = x.value();
  auto o = out.data();
  auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] += bv[j];
  return make_op(std::move(out), {x, bias},
                 [m, n](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   accumulate(gi[0], g);
                   if (gi[1]) {
                     auto d = gi[1]->data();
                     auto gv = g.data();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) d[j] += gv[i * n + j];
                   }
                 });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw UsageError("layer_norm: affine parameters do not match width " + std::to_string(n));
  }
  Tensor xhat(Shape{m, n});
  std::vector<double> inv_std(m);
  Tensor out(Shape{m, n});
  const auto xv = x.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                     const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   const auto gout = g.data();
                   const auto gam = in[1]->data();
                   if (gi[0]) {
                     auto dx = gi[0]->data();
                     std::vector<double> dh(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         dh[j] = gout[i * n + j] * gam[j];
                         mean_dh += dh[j];
                         mean_dh_h += dh[j] * xhat[i * n + j];
                       }
                       mean_dh /= static_cast<double>(n);
                       mean_dh_h /= static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         dx[i * n + j] += inv_std[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
                       }
                     }
                   }
                   if (gi[1] || gi[2]) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         if (gi[1]) (*gi[1])[j] += gout[i * n + j] * xhat[i * n + j];
                         if (gi[2]) (*gi[2])[j] += gout[i * n + j];
                       }
                   }
                 });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  return make_op(std::move(out), {x},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   const auto xv = in[0]->data();
                   auto d = gi[0]->data();
                   const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                   for (std::size_t i = 0; i < d.size(); ++i) {
                     const double v = xv[i];
                     const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                     const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                     d[i] += g[i] * (cdf + v * pdf);
                   }
                 });
}

Var masked_softmax_rows(const Var& x, std::shared_ptr<const std::vector<unsigned char>> allowed) {
  require_matrix(x, "masked_softmax_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (allowed && allowed->size() != m * n) throw UsageError("masked_softmax_rows: mask size mismatch");
  Tensor out(Shape{m, n});
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      if (!allowed || (*allowed)[i * n + j]) mx = std::max(mx, xv[i * n + j]);
    if (!std::isfinite(mx)) throw UsageError("masked_softmax_rows: row with no visible entries");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed && !(*allowed)[i * n + j]) continue;
      const double e = std::exp(xv[i * n + j] - mx);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_op(std::move(out), {x},
                 [m, n](const Tensor& y, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   for (std::size_t i = 0; i < m; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
                     for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                   }
                 });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   auto gv = g.data();
                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i];
                 });
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("concat_rows: empty input");
  for (const auto& x : xs) require_matrix(x, "concat_rows");
  const std::size_t n = xs.front().value().cols();
  std::size_t m = 0;
  for (const auto& x : xs) {
    if (x.value().cols() != n) throw UsageError("concat_rows: column counts differ");
    m += x.value().rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& x : xs) data.insert(data.end(), x.value().values().begin(), x.value().values().end());
  return make_op(Tensor(Shape{m, n}, std::move(data)), xs,
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < in.size(); ++k) {
                     const std::size_t len = in[k]->size();
                     if (gi[k]) {
                       auto d = gi[k]->data();
                       for (std::size_t i = 0; i < len; ++i) d[i] += g[offset + i];
                     }
                     offset += len;
                   }
                 });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t n = x.value().cols();
  if (begin + count > x.value().rows()) throw UsageError("slice_rows: range out of bounds");
  const auto& src = x.value().values();
  std::vector<double> data(src.begin() + static_cast<std::ptrdiff_t>(begin * n),
                           src.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return make_op(Tensor(Shape{count, n}, std::move(data)), {x},
                 [begin, n](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                            std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   for (std::size_t i = 0; i < g.size(); ++i) d[begin * n + i] += g[i];
                 });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("concat_cols: empty input");
  for (const auto& x : xs) require_matrix(x, "concat_cols");
  const std::size_t m = xs.front().value().rows();
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x.value().rows() != m) throw UsageError("concat_cols: row counts differ");
    n += x.value().cols();
  }
  Tensor out(Shape{m, n});
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t w = x.value().cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + offset + j] = x.value()[i * w + j];
    offset += w;
  }
  return make_op(std::move(out), xs,
                 [m, n](const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < in.size(); ++k) {
                     const std::size_t w = in[k]->cols();
                     if (gi[k]) {
                       auto d = gi[k]->data();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j) d[i * w + j] += g[i * n + offset + j];
                     }
                     offset += w;
                   }
                 });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (begin + count > n) throw UsageError("slice_cols: range out of bounds");
  Tensor out(Shape{m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.value()[i * n + begin + j];
  return make_op(std::move(out), {x},
                 [m, n, begin, count](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                                      std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j) d[i * n + begin + j] += g[i * count + j];
                 });
}

Var gather_mean_rows(const Var& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_mean_rows");
  if (rows.empty()) throw UsageError("gather_mean_rows: no rows selected");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out(Shape{n});
  for (std::size_t r : rows) {
    if (r >= m) throw UsageError("gather_mean_rows: row index out of range");
    for (std::size_t j = 0; j < n; ++j) out[j] += x.value()[r * n + j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out.data()) v *= inv;
  return make_op(std::move(out), {x},
                 [n, inv, idx = std::vector<std::size_t>(rows.begin(), rows.end())](
                     const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   for (std::size_t r : idx)
                     for (std::size_t j = 0; j < n; ++j) d[r * n + j] += inv * g[j];
                 });
}

Var cosine_rows(const Var& x, const Var& v) {
  require_matrix(x, "cosine_rows");
  const std::size_t m = x.value().rows(), d = x.value().cols();
  if (v.shape() != Shape{d}) {
    throw UsageError("cosine_rows: vector " + shape_to_string(v.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  }
  const auto xv = x.value().data();
  const auto vv = v.value().data();
  double vn2 = 0.0;
  for (double e : vv) vn2 += e * e;
  if (!(vn2 > 0.0)) throw DomainError("cosine similarity: zero-norm vector");
  const double vnorm = std::sqrt(vn2);

  Tensor out(Shape{m});
  std::vector<double> xnorm(m);
  std::vector<unsigned char> clamped(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0, xn2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += xv[i * d + j] * vv[j];
      xn2 += xv[i * d + j] * xv[i * d + j];
    }
    if (!(xn2 > 0.0)) throw DomainError("cosine similarity: zero-norm row");
    xnorm[i] = std::sqrt(xn2);
    double c = dot / (xnorm[i] * vnorm);
    if (c > 1.0 || c < -1.0) {
      c = std::clamp(c, -1.0, 1.0);
      clamped[i] = 1;
    }
    out[i] = c;
  }
  return make_op(std::move(out), {x, v},
                 [m, d, vnorm, xnorm = std::move(xnorm), clamped = std::move(clamped)](
                     const Tensor& c, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gi) {
                   const auto xv = in[0]->data();
                   const auto vv = in[1]->data();
                   for (std::size_t i = 0; i < m; ++i) {
                     if (clamped[i] || g[i] == 0.0) continue;
                     const double inv = 1.0 / (xnorm[i] * vnorm);
                     const double cx = c[i] / (xnorm[i] * xnorm[i]);
                     const double cv = c[i] / (vnorm * vnorm);
                     for (std::size_t j = 0; j < d; ++j) {
                       if (gi[0]) (*gi[0])[i * d + j] += g[i] * (vv[j] * inv - cx * xv[i * d + j]);
                       if (gi[1]) (*gi[1])[j] += g[i] * (xv[i * d + j] * inv - cv * vv[j]);
                     }
                   }
                 });
}

Var cosine(const Var& u, const Var& v) {
  if (u.value().rank() != 1) throw UsageError("cosine: expected a vector, got " + shape_to_string(u.shape()));
  return reshape(cosine_rows(reshape(u, Shape{1, u.value().size()}), v), Shape{});
}

Var pair_prob(const Var& a, const Var& b) {
  require_same_shape(a, b, "pair_prob");
  Tensor out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mx = std::max(av[i], bv[i]);
    const double ea = std::exp(av[i] - mx);
    const double eb = std::exp(bv[i] - mx);
    out[i] = ea / (ea + eb);
  }
  return make_op(std::move(out), {a, b},
                 [](const Tensor& p, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   for (std::size_t i = 0; i < p.size(); ++i) {
                     const double dp = g[i] * p[i] * (1.0 - p[i]);
                     if (gi[0]) (*gi[0])[i] += dp;
                     if (gi[1]) (*gi[1])[i] -= dp;
                   }
                 });
}

Var bilinear_resize(const Var& grid, std::size_t out_h, std::size_t out_w) {
  require_matrix(grid, "bilinear_resize");
  const std::size_t in_h = grid.value().rows(), in_w = grid.value().cols();
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw DomainError("bilinear_resize: zero extent");
  auto ys = kernels::corner_aligned_axis(in_h, out_h);
  auto xs = kernels::corner_aligned_axis(in_w, out_w);
  const auto gv = grid.value().data();
  Tensor out(Shape{out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& sy = ys[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& sx = xs[x];
      const double a = gv[sy.lo * in_w + sx.lo], b = gv[sy.lo * in_w + sx.hi];
      const double c = gv[sy.hi * in_w + sx.lo], d = gv[sy.hi * in_w + sx.hi];
      const double top = a + sx.frac * (b - a);
      const double bottom = c + sx.frac * (d - c);
      const double v = top + sy.frac * (bottom - top);
      const double lo = std::min(std::min(a, b), std::min(c, d));
      const double hi = std::max(std::max(a, b), std::max(c, d));
      out[y * out_w + x] = std::clamp(v, lo, hi);
    }
  }
  return make_op(std::move(out), {grid},
                 [in_w, out_w, ys = std::move(ys), xs = std::move(xs)](
                     const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   auto d = gi[0]->data();
                   for (std::size_t y = 0; y < ys.size(); ++y) {
                     const auto& sy = ys[y];
                     for (std::size_t x = 0; x < xs.size(); ++x) {
                       const auto& sx = xs[x];
                       const double gg = g[y * out_w + x];
                       d[sy.lo * in_w + sx.lo] += gg * (1.0 - sy.frac) * (1.0 - sx.frac);
                       d[sy.lo * in_w + sx.hi] += gg * (1.0 - sy.frac) * sx.frac;
                       d[sy.hi * in_w + sx.lo] += gg * sy.frac * (1.0 - sx.frac);
                       d[sy.hi * in_w + sx.hi] += gg * sy.frac * sx.frac;
                     }
                   }
                 });
}

Var sum(const Var& x) {
  return make_op(Tensor::scalar(x.value().sum()), {x},
                 [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gi) {
                   if (!gi[0]) return;
                   const double gv = g.item();
                   for (double& v : gi[0]->data()) v += gv;
                 });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

}  // namespace adaclip::ag
