#include "adaclip/localization.hpp"

#include <cmath>

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::localization {

using ag::Var;

ProjectionLayer ProjectionLayer::initialize(const std::string& name, std::size_t in_dim, std::size_t out_dim,
                                            std::uint64_t seed, bool trainable) {
  Rng rng(seed);
  ProjectionLayer p;
  p.weight = Parameter(name + ".weight",
                       rng.normal_tensor(Shape{in_dim, out_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim))),
                       trainable);
  p.bias = Parameter(name + ".bias", Tensor(Shape{out_dim}), trainable);
  return p;
}

Var project_patches(const Var& patch_embeds, ProjectionLayer& proj) {
  const auto& shape = patch_embeds.shape();
  if (shape.size() != 2 || shape[1] != proj.weight.value.rows()) {
    throw UsageError("project_patches: patch embeddings " + shape_to_string(shape) + " do not match projection " +
                     shape_to_string(proj.weight.value.shape()));
  }
  return ag::linear(patch_embeds, Var::parameter(proj.weight), Var::parameter(proj.bias));
}

Var project_vector(const Var& v, ProjectionLayer& proj) {
  if (v.value().rank() != 1) throw UsageError("project_vector: expected a vector");
  const Var row = project_patches(ag::reshape(v, Shape{1, v.value().size()}), proj);
  return ag::reshape(row, Shape{proj.bias.value.size()});
}

Var patch_scores(const Var& projected, const Var& text_normal, const Var& text_abnormal, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("patch_scores: temperature must be positive");
  Var cos_a = ag::cosine_rows(projected, text_abnormal);
  Var cos_n = ag::cosine_rows(projected, text_normal);
  if (temperature != 1.0) {
    cos_a = ag::scale(cos_a, 1.0 / temperature);
    cos_n = ag::scale(cos_n, 1.0 / temperature);
  }
  return ag::pair_prob(cos_a, cos_n);
}

Var scores_to_map(const Var& scores, std::size_t out_h, std::size_t out_w) {
  const std::size_t n = scores.value().size();
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw UsageError("scores_to_map: " + std::to_string(n) + " patches is not a square grid");
  return ag::bilinear_resize(ag::reshape(scores, Shape{side, side}), out_h, out_w);
}

Var layer_anomaly_map(const Var& projected, const Var& text_normal, const Var& text_abnormal, std::size_t out_h,
                      std::size_t out_w, double temperature) {
  return scores_to_map(patch_scores(projected, text_normal, text_abnormal, temperature), out_h, out_w);
}

Var aggregate_maps(const std::vector<Var>& per_layer) {
  if (per_layer.empty()) throw UsageError("aggregate_maps: no layer maps");
  return ag::mean_n(per_layer);
}

}  // namespace adaclip::localization
