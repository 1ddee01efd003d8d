#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/tensor.hpp"

namespace adaclip::localization {

// Learnable affine map from patch width d_v to the shared width d_u.
struct ProjectionLayer {
  Parameter weight;  // (d_v x d_u), N(0, 1/d_v)
  Parameter bias;    // (d_u), zero

  static ProjectionLayer initialize(const std::string& name, std::size_t in_dim, std::size_t out_dim,
                                    std::uint64_t seed, bool trainable = true);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

// Rowwise affine map (N x d_v) -> (N x d_u).
ag::Var project_patches(const ag::Var& patch_embeds, ProjectionLayer& proj);
// Same map applied to one vector (d_v) -> (d_u).
ag::Var project_vector(const ag::Var& v, ProjectionLayer& proj);

// Per-patch abnormal probability: the abnormal branch of the two-way softmax
// over (cos(F_P, F_T_A), cos(F_P, F_T_N)) / temperature. Length N.
ag::Var patch_scores(const ag::Var& projected, const ag::Var& text_normal, const ag::Var& text_abnormal,
                     double temperature = 1.0);

// Reshapes N patch scores to the g x g grid (N must be a perfect square) and
// resizes it bilinearly to (out_h x out_w).
ag::Var scores_to_map(const ag::Var& scores, std::size_t out_h, std::size_t out_w);

ag::Var layer_anomaly_map(const ag::Var& projected, const ag::Var& text_normal, const ag::Var& text_abnormal,
                          std::size_t out_h, std::size_t out_w, double temperature = 1.0);

// Elementwise mean over hierarchy layers. The mean (rather than a plain sum)
// keeps the aggregated map in [0, 1]; it is a positive rescaling of the sum
// and therefore rank-equivalent to it.
ag::Var aggregate_maps(const std::vector<ag::Var>& per_layer);

// Values of the AnomalyOutput produced for one image.
struct AnomalyOutput {
  std::map<std::size_t, Tensor> per_layer_maps;
  Tensor aggregated_map;
  double image_score = 0.0;
};

}  // namespace adaclip::localization
