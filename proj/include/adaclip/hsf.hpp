#pragma once

#include <cstdint>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/localization.hpp"
#include "adaclip/tensor.hpp"

// Hybrid Semantic Fusion: cluster patch embeddings, score the clusters with
// the anomaly map, and fuse the most abnormal cluster centroid of each
// hierarchy layer into the global image embedding.
namespace adaclip::hsf {

struct Clustering {
  std::vector<std::size_t> assignments;  // per input row, in [0, K)
  Tensor centroids;                      // (K x d), mean of member rows
  double inertia = 0.0;
  // Inertia after every centroid update, non-increasing.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;

  std::size_t num_clusters() const { return centroids.rows(); }
  std::vector<std::vector<std::size_t>> members() const;
};

// KMeans++ seeding followed by Lloyd iterations until the assignment is a
// fixpoint or max_iter updates have run. Rows are sorted lexicographically
// first, so the result does not depend on row order; assignments are
// reported in the caller's order. Ties go to the lowest centroid id. A
// cluster that goes empty takes the row farthest from its own centroid.
Clustering kmeans_pp(const Tensor& rows, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

// Mean patch score per cluster, (K).
Tensor cluster_scores(const Clustering& clustering, const Tensor& patch_scores);

// Index of the highest cluster score; ties resolve to the lowest id.
std::size_t select_cluster(const Tensor& scores);

enum class Variant {
  kTop1,    // the top-scoring cluster of each layer
  kLegacy,  // top-k patches, cluster them, average all centroids
};

enum class ScoreSource { kAggregated, kPerLayer };

struct HsfConfig {
  std::size_t k = 20;  // clamped to the patch count
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  Variant variant = Variant::kTop1;
  ScoreSource score_source = ScoreSource::kAggregated;
  std::size_t legacy_topk = 16;
  std::size_t legacy_clusters = 4;
};

struct LayerInput {
  ag::Var embeds;       // (N x d_v)
  Tensor patch_scores;  // (N), pre-resize
  localization::ProjectionLayer* projection = nullptr;
};

// The local semantic C_i of one layer under `config`.
ag::Var local_semantic(const LayerInput& layer, const HsfConfig& config);

// F~I = F^I + sum_i Proj(C_i).
ag::Var semantic_embedding(const std::vector<LayerInput>& layers, const ag::Var& global, const HsfConfig& config);

// Abnormal branch of the two-way softmax over
// (cos(F, F_T_A), cos(F, F_T_N)) / temperature.
ag::Var image_score(const ag::Var& semantic, const ag::Var& text_normal, const ag::Var& text_abnormal,
                    double temperature = 1.0);

// Maximum pixel of the anomaly map: the baseline image score HSF replaces.
double max_score_baseline(const Tensor& aggregated_map);

}  // namespace adaclip::hsf
