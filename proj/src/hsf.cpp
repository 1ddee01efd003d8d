#include "adaclip/hsf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::hsf {

using ag::Var;

std::vector<std::vector<std::size_t>> Clustering::members() const {
  std::vector<std::vector<std::size_t>> out(num_clusters());
  for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
  return out;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

class Lloyd {
 public:
  Lloyd(const Tensor& x, std::size_t k) : x_(x), n_(x.rows()), d_(x.cols()), k_(k), centroids_(Shape{k, d_}) {}

  void seed_plus_plus(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<unsigned char> chosen(n_, 0);
    std::vector<double> dist(n_, INFINITY);
    auto take = [&](std::size_t c, std::size_t idx) {
      chosen[idx] = 1;
      std::copy_n(row(idx), d_, &centroids_[c * d_]);
      for (std::size_t i = 0; i < n_; ++i) dist[i] = std::min(dist[i], sq_dist(row(i), row(idx), d_));
    };
    take(0, static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_) - 1)));
    for (std::size_t c = 1; c < k_; ++c) {
      const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
      std::size_t pick = n_;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double running = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
          if (dist[i] <= 0.0) continue;
          running += dist[i];
          pick = i;
          if (running > target) break;
        }
      } else {
        for (std::size_t i = 0; i < n_ && pick == n_; ++i)
          if (!chosen[i]) pick = i;
      }
      take(c, pick);
    }
  }

  std::vector<std::size_t> assign() {
    std::vector<std::size_t> a(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double best = INFINITY;
      for (std::size_t c = 0; c < k_; ++c) {
        const double dd = sq_dist(row(i), &centroids_[c * d_], d_);
        if (dd < best) {
          best = dd;
          a[i] = c;
        }
      }
    }
    repair_empty(a);
    return a;
  }

  void update_means(const std::vector<std::size_t>& a) {
    std::vector<std::size_t> counts(k_, 0);
    centroids_.fill(0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      ++counts[a[i]];
      for (std::size_t j = 0; j < d_; ++j) centroids_[a[i] * d_ + j] += x_[i * d_ + j];
    }
    for (std::size_t c = 0; c < k_; ++c) {
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < d_; ++j) centroids_[c * d_ + j] *= inv;
    }
  }

  double inertia(const std::vector<std::size_t>& a) const {
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) total += sq_dist(row(i), &centroids_[a[i] * d_], d_);
    return total;
  }

  const Tensor& centroids() const { return centroids_; }

 private:
  const double* row(std::size_t i) const { return &x_[i * d_]; }

  void repair_empty(std::vector<std::size_t>& a) {
    std::vector<std::size_t> counts(k_, 0);
    for (std::size_t c : a) ++counts[c];
    for (std::size_t c = 0; c < k_; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n_;
      double far_dist = -1.0;
      for (std::size_t i = 0; i < n_; ++i) {
        if (counts[a[i]] < 2) continue;
        const double dd = sq_dist(row(i), &centroids_[a[i] * d_], d_);
        if (dd > far_dist) {
          far_dist = dd;
          far = i;
        }
      }
      if (far == n_) continue;
      --counts[a[far]];
      a[far] = c;
      counts[c] = 1;
      std::copy_n(row(far), d_, &centroids_[c * d_]);
    }
  }

  const Tensor& x_;
  std::size_t n_, d_, k_;
  Tensor centroids_;
};

}  // namespace

Clustering kmeans_pp(const Tensor& rows, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  if (rows.rank() != 2 || rows.rows() == 0) throw InputError("kmeans_pp: expected a nonempty (N x d) matrix");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (k < 1) throw InputError("kmeans_pp: K must be at least 1");
  if (k > n) throw InputError("kmeans_pp: K=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  if (max_iter < 1) throw InputError("kmeans_pp: max_iter must be at least 1");

  // Canonical row order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(&rows[a * d], &rows[a * d] + d, &rows[b * d], &rows[b * d] + d);
  });
  Tensor sorted(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&rows[order[i] * d], d, &sorted[i * d]);

  Lloyd lloyd(sorted, k);
  lloyd.seed_plus_plus(seed);
  std::vector<std::size_t> assignment = lloyd.assign();

  Clustering result;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    lloyd.update_means(assignment);
    const double inertia = lloyd.inertia(assignment);
    if (!result.inertia_history.empty()) {
      const double prev = result.inertia_history.back();
      if (inertia > prev + 1e-9 * std::max(1.0, prev)) {
        throw std::logic_error("kmeans_pp: inertia increased from " + std::to_string(prev) + " to " +
                               std::to_string(inertia));
      }
    }
    result.inertia_history.push_back(inertia);
    result.iterations = iter + 1;
    std::vector<std::size_t> next = lloyd.assign();
    if (next == assignment) break;
    assignment = std::move(next);
    if (iter + 1 == max_iter) lloyd.update_means(assignment);
  }
  // After the loop the centroids are the means of `assignment`.
  result.centroids = lloyd.centroids();
  result.inertia = lloyd.inertia(assignment);
  result.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) result.assignments[order[i]] = assignment[i];
  return result;
}

Tensor cluster_scores(const Clustering& clustering, const Tensor& patch_scores) {
  if (patch_scores.size() != clustering.assignments.size()) {
    throw UsageError("cluster_scores: " + std::to_string(patch_scores.size()) + " scores for " +
                     std::to_string(clustering.assignments.size()) + " patches");
  }
  const std::size_t k = clustering.num_clusters();
  Tensor sums(Shape{k});
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < patch_scores.size(); ++i) {
    sums[clustering.assignments[i]] += patch_scores[i];
    ++counts[clustering.assignments[i]];
  }
  for (std::size_t c = 0; c < k; ++c) sums[c] = counts[c] ? sums[c] / static_cast<double>(counts[c]) : -INFINITY;
  return sums;
}

std::size_t select_cluster(const Tensor& scores) {
  if (scores.size() == 0) throw UsageError("select_cluster: no clusters");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

Var local_semantic(const LayerInput& layer, const HsfConfig& config) {
  const Tensor& embeds = layer.embeds.value();
  const std::size_t n = embeds.rows();
  if (layer.patch_scores.size() != n) throw UsageError("local_semantic: score count does not match patch count");

  if (config.variant == Variant::kTop1) {
    const Clustering clustering = kmeans_pp(embeds, std::min(config.k, n), config.seed, config.max_iter);
    const std::size_t best = select_cluster(cluster_scores(clustering, layer.patch_scores));
    const auto members = clustering.members();
    return ag::gather_mean_rows(layer.embeds, members[best]);
  }

  // Legacy: keep the top-k patches by score, cluster them, average every
  // cluster centroid.
  const std::size_t topk = std::clamp<std::size_t>(config.legacy_topk, 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return layer.patch_scores[a] > layer.patch_scores[b]; });
  idx.resize(topk);
  const std::size_t d = embeds.cols();
  Tensor subset(Shape{topk, d});
  for (std::size_t i = 0; i < topk; ++i) std::copy_n(&embeds[idx[i] * d], d, &subset[i * d]);
  const std::size_t clusters = std::clamp<std::size_t>(config.legacy_clusters, 1, topk);
  const Clustering clustering = kmeans_pp(subset, clusters, config.seed, config.max_iter);
  std::vector<Var> centroids;
  for (const auto& members : clustering.members()) {
    std::vector<std::size_t> original;
    for (std::size_t m : members) original.push_back(idx[m]);
    centroids.push_back(ag::gather_mean_rows(layer.embeds, original));
  }
  return ag::mean_n(centroids);
}

Var semantic_embedding(const std::vector<LayerInput>& layers, const Var& global, const HsfConfig& config) {
  if (layers.empty()) throw UsageError("semantic_embedding: no hierarchy layers");
  std::vector<Var> terms{global};
  for (const auto& layer : layers) {
    if (!layer.projection) throw UsageError("semantic_embedding: layer without a projection");
    terms.push_back(localization::project_vector(local_semantic(layer, config), *layer.projection));
  }
  return ag::add_n(terms);
}

Var image_score(const Var& semantic, const Var& text_normal, const Var& text_abnormal, double temperature) {
  Var cos_a = ag::cosine(semantic, text_abnormal);
  Var cos_n = ag::cosine(semantic, text_normal);
  if (temperature != 1.0) {
    cos_a = ag::scale(cos_a, 1.0 / temperature);
    cos_n = ag::scale(cos_n, 1.0 / temperature);
  }
  return ag::pair_prob(cos_a, cos_n);
}

double max_score_baseline(const Tensor& aggregated_map) {
  if (aggregated_map.size() == 0) throw UsageError("max_score_baseline: empty map");
  return aggregated_map.max();
}

}  // namespace adaclip::hsf
