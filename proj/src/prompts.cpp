#include "adaclip/prompts.hpp"

#include "adaclip/digest.hpp"
#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::prompts {

using ag::Var;

void PromptConfig::validate(std::size_t num_layers) const {
  if (depth < 1 || depth > num_layers) {
    throw ConfigError("prompt depth must lie in [1, " + std::to_string(num_layers) + "]");
  }
  if (length < 1) throw ConfigError("prompt length must be at least 1");
}

PromptSet PromptSet::initialize(const encoders::EncoderConfig& enc, const PromptConfig& config, std::uint64_t seed) {
  config.validate(enc.num_layers);
  PromptSet set;
  set.config = config;
  Rng rng(mix_seed(seed, 3));
  const std::size_t dv = enc.embed_dim_v, dl = enc.embed_dim_t;
  for (std::size_t j = 0; j < config.depth; ++j) {
    set.static_image.emplace_back("prompts.static.image." + std::to_string(j + 1),
                                  rng.normal_tensor(Shape{config.length, dv}, 0.02), true);
  }
  for (std::size_t j = 0; j < config.depth; ++j) {
    set.static_text.emplace_back("prompts.static.text." + std::to_string(j + 1),
                                 rng.normal_tensor(Shape{config.length, dl}, 0.02), true);
  }
  const std::size_t rows = config.depth * config.length;
  set.dpg_image_w = Parameter("prompts.dpg.image.w", Tensor(Shape{dv, rows * dv}), true);
  set.dpg_image_b = Parameter("prompts.dpg.image.b", Tensor(Shape{rows * dv}), true);
  set.dpg_text_w = Parameter("prompts.dpg.text.w", Tensor(Shape{dv, rows * dl}), true);
  set.dpg_text_b = Parameter("prompts.dpg.text.b", Tensor(Shape{rows * dl}), true);
  return set;
}

std::vector<Parameter*> PromptSet::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : static_image) out.push_back(&p);
  for (auto& p : static_text) out.push_back(&p);
  for (Parameter* p : {&dpg_image_w, &dpg_image_b, &dpg_text_w, &dpg_text_b}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> PromptSet::parameters() const {
  auto ps = const_cast<PromptSet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::string PromptSet::digest() const { return parameters_digest(parameters()); }

namespace {

encoders::LayerPrompts project_blocks(const Var& class_row, Parameter& w, Parameter& b, std::size_t depth,
                                      std::size_t length, std::size_t width) {
  const Var flat = ag::linear(class_row, Var::parameter(w), Var::parameter(b));
  const Var stacked = ag::reshape(flat, Shape{depth * length, width});
  encoders::LayerPrompts blocks;
  for (std::size_t j = 0; j < depth; ++j) blocks.push_back(ag::slice_rows(stacked, j * length, length));
  return blocks;
}

}  // namespace

PromptBlocks dynamic_from_class_token(const Tensor& class_token, const encoders::EncoderWeights& backbone,
                                      PromptSet& pset) {
  const auto& enc = backbone.config;
  if (class_token.shape() != Shape{enc.embed_dim_v}) {
    throw UsageError("generate_dynamic: class token has shape " + shape_to_string(class_token.shape()));
  }
  const Var row = Var::constant(class_token.reshaped(Shape{1, enc.embed_dim_v}));
  const auto& cfg = pset.config;
  PromptBlocks out;
  out.image = project_blocks(row, pset.dpg_image_w, pset.dpg_image_b, cfg.depth, cfg.length, enc.embed_dim_v);
  out.text = project_blocks(row, pset.dpg_text_w, pset.dpg_text_b, cfg.depth, cfg.length, enc.embed_dim_t);
  return out;
}

PromptBlocks generate_dynamic(const Tensor& image, const encoders::EncoderWeights& backbone, PromptSet& pset) {
  const auto plain = encoders::encode_image(backbone, image, nullptr);
  return dynamic_from_class_token(plain.class_final.value(), backbone, pset);
}

PromptBlocks static_blocks(PromptSet& pset) {
  PromptBlocks out;
  for (auto& p : pset.static_image) out.image.push_back(Var::parameter(p));
  for (auto& p : pset.static_text) out.text.push_back(Var::parameter(p));
  return out;
}

encoders::LayerPrompts combine_hybrid(const encoders::LayerPrompts& static_part,
                                      const encoders::LayerPrompts& dynamic_part, const PromptConfig& config,
                                      std::size_t width) {
  const std::size_t depth = config.depth;
  auto check = [&](const encoders::LayerPrompts& blocks, const char* which) {
    if (blocks.size() != depth) {
      throw UsageError(std::string("combine_hybrid: ") + which + " prompts have " + std::to_string(blocks.size()) +
                       " layers, expected " + std::to_string(depth));
    }
    for (const auto& b : blocks) {
      if (!b.defined() || b.shape() != Shape{config.length, width}) {
        throw UsageError(std::string("combine_hybrid: ") + which + " prompt block has the wrong shape");
      }
    }
  };
  if (config.enable_static) check(static_part, "static");
  if (config.enable_dynamic) check(dynamic_part, "dynamic");

  if (config.enable_static && !config.enable_dynamic) return static_part;
  if (!config.enable_static && config.enable_dynamic) return dynamic_part;
  encoders::LayerPrompts out;
  out.reserve(depth);
  for (std::size_t j = 0; j < depth; ++j) {
    if (config.enable_static) {
      out.push_back(ag::add(static_part[j], dynamic_part[j]));
    } else {
      out.push_back(Var::constant(Tensor(Shape{config.length, width})));
    }
  }
  return out;
}

}  // namespace adaclip::prompts
