#pragma once

#include <cstdint>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/encoders.hpp"
#include "adaclip/tensor.hpp"

namespace adaclip::prompts {

struct PromptConfig {
  std::size_t depth = 4;   // J: layers receiving fresh prompts
  std::size_t length = 5;  // M_p: tokens per prompted layer
  bool enable_static = true;
  bool enable_dynamic = true;

  void validate(std::size_t num_layers) const;
};

// Learnable prompt parameters for both towers.
//
// Static prompts are per-layer (M_p x width) blocks shared by all images and
// start from N(0, 0.02^2). The dynamic prompt generator (DPG) is the frozen
// prompt-free image tower followed by one linear map per tower from the class
// token to J * M_p * width values; those maps start at zero, so an untrained
// model is the purely static one.
struct PromptSet {
  PromptConfig config;
  std::vector<Parameter> static_image;  // J x (M_p x d_v)
  std::vector<Parameter> static_text;   // J x (M_p x d_l)
  Parameter dpg_image_w;                // (d_v x J*M_p*d_v)
  Parameter dpg_image_b;                // (J*M_p*d_v)
  Parameter dpg_text_w;                 // (d_v x J*M_p*d_l)
  Parameter dpg_text_b;                 // (J*M_p*d_l)

  static PromptSet initialize(const encoders::EncoderConfig& enc, const PromptConfig& config, std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::string digest() const;
};

struct PromptBlocks {
  encoders::LayerPrompts image;
  encoders::LayerPrompts text;
};

// P^D = DPG(I). Runs the prompt-free tower and projects its class token.
PromptBlocks generate_dynamic(const Tensor& image, const encoders::EncoderWeights& backbone, PromptSet& pset);

// Same, from an already computed prompt-free class token (d_v).
PromptBlocks dynamic_from_class_token(const Tensor& class_token, const encoders::EncoderWeights& backbone,
                                      PromptSet& pset);

// Leaf variables for the static prompt parameters.
PromptBlocks static_blocks(PromptSet& pset);

// Per-layer P_j = P^S_j + P^D_j for one tower. A disabled branch contributes
// nothing: static-only returns the static blocks unchanged, dynamic-only the
// dynamic blocks, and with both disabled every block is zero. Blocks of a
// disabled branch may be left empty.
encoders::LayerPrompts combine_hybrid(const encoders::LayerPrompts& static_part,
                                      const encoders::LayerPrompts& dynamic_part, const PromptConfig& config,
                                      std::size_t width);

}  // namespace adaclip::prompts
