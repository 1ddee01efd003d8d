#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/encoders.hpp"
#include "adaclip/hsf.hpp"
#include "adaclip/localization.hpp"
#include "adaclip/prompts.hpp"

namespace adaclip {

struct ModelConfig {
  encoders::EncoderConfig encoder;
  prompts::PromptConfig prompts;
  hsf::HsfConfig hsf;
  double temperature = 1.0;
  // One projection per hierarchy layer instead of a single shared one.
  bool projection_per_layer = false;
  // false reproduces the frozen-projection ablation.
  bool projection_trainable = true;

  void validate() const;
};

struct CaptionPair {
  encoders::TokenSequence normal;
  encoders::TokenSequence abnormal;
};

struct ForwardOptions {
  // Use these prompts instead of the model's own (per-image refinement).
  prompts::PromptSet* prompt_override = nullptr;
  // Treat the projection layers as constants for this pass.
  bool freeze_projection = false;
  // Per-pixel Gaussian noise added to the aggregated map (then clamped to
  // [0, 1]). When active, HSF scores clusters from the noisy map averaged
  // over each patch footprint.
  double map_noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

// Graph handles and values of one forward pass.
struct ForwardPass {
  std::vector<std::size_t> layers;
  std::vector<ag::Var> layer_maps;   // (H x W) each
  ag::Var map;                       // aggregated (H x W)
  ag::Var score;                     // scalar S
  ag::Var text_normal, text_abnormal;
  std::vector<Tensor> layer_embeds;        // (N x d_v) patch tokens each
  std::vector<Tensor> layer_patch_scores;  // (N) each, pre-resize
  Tensor patch_scores;                     // aggregated, pre-resize
  Tensor output_map;                       // map value, noisy when noise is on
  // Keeps frozen copies of the projections alive while the graph exists.
  std::shared_ptr<std::vector<localization::ProjectionLayer>> frozen_projections;

  localization::AnomalyOutput output() const;
};

// Frozen dual encoder + learnable prompts + learnable projection(s).
// Graphs built by forward() point into this object; do not move or destroy
// the model while a ForwardPass is alive.
class AdaClipModel {
 public:
  AdaClipModel(ModelConfig config, encoders::Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const encoders::Vocabulary& vocabulary() const { return vocab_; }
  encoders::EncoderWeights& weights() { return weights_; }
  const encoders::EncoderWeights& weights() const { return weights_; }
  prompts::PromptSet& prompt_set() { return prompts_; }
  const prompts::PromptSet& prompt_set() const { return prompts_; }
  std::vector<localization::ProjectionLayer>& projections() { return projections_; }
  localization::ProjectionLayer& projection_for(std::size_t hierarchy_position);

  CaptionPair tokenize_captions(const std::string& normal_text, const std::string& abnormal_text) const;

  ForwardPass forward(const Tensor& image, const CaptionPair& captions, const ForwardOptions& options = {});
  localization::AnomalyOutput infer(const Tensor& image, const CaptionPair& captions,
                                    const ForwardOptions& options = {});

  // Prompt and projection parameters flagged trainable.
  std::vector<Parameter*> trainable_parameters();
  // Every parameter: encoder, prompts, projections.
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;
  std::string frozen_digest() const { return weights_.digest(); }

 private:
  ModelConfig config_;
  encoders::Vocabulary vocab_;
  encoders::EncoderWeights weights_;
  prompts::PromptSet prompts_;
  std::vector<localization::ProjectionLayer> projections_;
};

}  // namespace adaclip
