#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/tensor.hpp"

// Toy frozen dual encoder: a patch-embedding ViT image tower with a class
// token, a causal text tower over a word vocabulary, and the output
// projections into the shared embedding space.
namespace adaclip::encoders {

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim_v = 32;
  std::size_t embed_dim_t = 32;
  std::size_t shared_dim = 32;
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t context_len = 8;
  // 1-based, strictly increasing layer indices whose patch tokens are kept.
  std::vector<std::size_t> hierarchy_layers{2, 3, 4, 6};

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  // Throws ConfigError on any violated invariant.
  void validate() const;
};

using TokenId = std::uint32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  // Word i of `words` gets id kNumSpecials + i.
  explicit Vocabulary(std::vector<std::string> words);
  static Vocabulary builtin();
  // One word per line; blank lines are skipped.
  static Vocabulary load(const std::filesystem::path& path);

  std::size_t size() const { return kNumSpecials + words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(std::string_view word) const;
  TokenId lookup(std::string_view word) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t last_index = 0;
};

// [BOS] words... [EOS] then PAD up to context_len. Unknown words map to UNK.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t context_len);

struct TransformerLayer {
  Parameter ln1_gamma, ln1_beta;
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln2_gamma, ln2_beta;
  Parameter fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<Parameter*> parameters();
};

// Frozen weights of both towers. Matrices are drawn from N(0, 1/fan_in),
// embedding rows from N(0, 1/width); biases start at zero and layer-norm
// gains at one.
struct EncoderWeights {
  EncoderConfig config;
  Parameter patch_embed;   // (patch_size^2 x d_v)
  Parameter class_token;   // (d_v)
  Parameter image_pos;     // (N + 1 x d_v)
  std::vector<TransformerLayer> image_layers;
  Parameter image_ln_post_gamma, image_ln_post_beta;
  Parameter image_proj;       // (d_v x d_u)
  Parameter image_proj_bias;  // (d_u), zero
  Parameter token_embedding;  // (vocab x d_l)
  Parameter text_pos;         // (context_len x d_l)
  std::vector<TransformerLayer> text_layers;
  Parameter text_ln_final_gamma, text_ln_final_beta;
  Parameter text_proj;  // (d_l x d_u)

  static EncoderWeights initialize(const EncoderConfig& config, std::size_t vocab_size, std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::string digest() const;
};

// Prompt blocks for layers 1..J, one (M_p x width) matrix each.
using LayerPrompts = std::vector<ag::Var>;

struct ImageEncoding {
  // Hierarchy layer index -> (N x d_v) patch tokens at that layer's output.
  std::map<std::size_t, ag::Var> patch_embeds;
  // Class token after the final layer norm, (d_v).
  ag::Var class_final;
};

// Rows entering each layer and rows passed on from it (vanilla rows plus any
// carried prompt rows), one entry per layer.
struct LayerRows {
  std::size_t input = 0;
  std::size_t output = 0;
};
using RowTrace = std::vector<LayerRows>;

// Runs the image tower. With `prompts` null the tower is the vanilla,
// prompt-free encoder. Otherwise layers j <= J see [tokens; P_j] and drop the
// prompt rows from their output; the prompt rows output by layer J are then
// carried through the remaining layers.
ImageEncoding encode_image(const EncoderWeights& weights, const Tensor& image, const LayerPrompts* prompts,
                           RowTrace* trace = nullptr);

// Text embedding (d_u): hidden state at last_index, final layer norm, TextProj.
ag::Var encode_text(const EncoderWeights& weights, const TokenSequence& seq, const LayerPrompts* prompts,
                    RowTrace* trace = nullptr);

// F^I = ImageProj(class_final).
ag::Var image_global(const EncoderWeights& weights, const ag::Var& class_final);

// Patch pixels flattened per patch, normalised to zero mean / unit scale:
// (N x patch_size^2).
Tensor patchify(const Tensor& image, std::size_t patch_size);

}  // namespace adaclip::encoders
