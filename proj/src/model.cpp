#include "adaclip/model.hpp"

#include <algorithm>

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip {

using ag::Var;

void ModelConfig::validate() const {
  encoder.validate();
  prompts.validate(encoder.num_layers);
  if (hsf.k < 1) throw ConfigError("hsf_k must be at least 1");
  if (hsf.max_iter < 1) throw ConfigError("kmeans_max_iter must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

localization::AnomalyOutput ForwardPass::output() const {
  localization::AnomalyOutput out;
  for (std::size_t i = 0; i < layers.size(); ++i) out.per_layer_maps.emplace(layers[i], layer_maps[i].value());
  out.aggregated_map = output_map;
  out.image_score = score.value().item();
  return out;
}

AdaClipModel::AdaClipModel(ModelConfig config, encoders::Vocabulary vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  weights_ = encoders::EncoderWeights::initialize(config_.encoder, vocab_.size(), seed);
  prompts_ = prompts::PromptSet::initialize(config_.encoder, config_.prompts, seed);
  const std::size_t count = config_.projection_per_layer ? config_.encoder.hierarchy_layers.size() : 1;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name =
        config_.projection_per_layer
            ? "projection.layer" + std::to_string(config_.encoder.hierarchy_layers[i])
            : std::string("projection");
    projections_.push_back(localization::ProjectionLayer::initialize(
        name, config_.encoder.embed_dim_v, config_.encoder.shared_dim, mix_seed(seed, 10 + i),
        config_.projection_trainable));
  }
}

localization::ProjectionLayer& AdaClipModel::projection_for(std::size_t hierarchy_position) {
  return projections_.size() == 1 ? projections_.front() : projections_.at(hierarchy_position);
}

CaptionPair AdaClipModel::tokenize_captions(const std::string& normal_text, const std::string& abnormal_text) const {
  return {encoders::tokenize(normal_text, vocab_, config_.encoder.context_len),
          encoders::tokenize(abnormal_text, vocab_, config_.encoder.context_len)};
}

namespace {

// Mean of the map over each patch's pixel footprint, (N).
Tensor pool_patches(const Tensor& map, std::size_t patch_size) {
  const std::size_t gh = map.rows() / patch_size, gw = map.cols() / patch_size;
  Tensor out(Shape{gh * gw});
  const double inv = 1.0 / static_cast<double>(patch_size * patch_size);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double s = 0.0;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x) s += map.at(py * patch_size + y, px * patch_size + x);
      out[py * gw + px] = s * inv;
    }
  return out;
}

}  // namespace

ForwardPass AdaClipModel::forward(const Tensor& image, const CaptionPair& captions, const ForwardOptions& options) {
  const auto& enc_cfg = config_.encoder;
  const auto& pcfg = config_.prompts;
  prompts::PromptSet& pset = options.prompt_override ? *options.prompt_override : prompts_;

  prompts::PromptBlocks stat, dyn;
  if (pcfg.enable_static) stat = prompts::static_blocks(pset);
  if (pcfg.enable_dynamic) dyn = prompts::generate_dynamic(image, weights_, pset);
  const auto image_prompts = prompts::combine_hybrid(stat.image, dyn.image, pcfg, enc_cfg.embed_dim_v);
  const auto text_prompts = prompts::combine_hybrid(stat.text, dyn.text, pcfg, enc_cfg.embed_dim_t);

  const auto encoded = encoders::encode_image(weights_, image, &image_prompts);
  const Var global = encoders::image_global(weights_, encoded.class_final);

  ForwardPass pass;
  pass.text_normal = encoders::encode_text(weights_, captions.normal, &text_prompts);
  pass.text_abnormal = encoders::encode_text(weights_, captions.abnormal, &text_prompts);

  std::vector<localization::ProjectionLayer>* projs = &projections_;
  if (options.freeze_projection) {
    pass.frozen_projections = std::make_shared<std::vector<localization::ProjectionLayer>>(projections_);
    for (auto& p : *pass.frozen_projections) {
      p.weight.trainable = false;
      p.bias.trainable = false;
    }
    projs = pass.frozen_projections.get();
  }
  auto projection = [&](std::size_t pos) -> localization::ProjectionLayer& {
    return projs->size() == 1 ? projs->front() : projs->at(pos);
  };

  const std::size_t h = image.rows(), w = image.cols();
  const auto& layers = enc_cfg.hierarchy_layers;
  std::vector<Var> layer_scores;
  for (std::size_t pos = 0; pos < layers.size(); ++pos) {
    const Var projected = localization::project_patches(encoded.patch_embeds.at(layers[pos]), projection(pos));
    const Var scores =
        localization::patch_scores(projected, pass.text_normal, pass.text_abnormal, config_.temperature);
    layer_scores.push_back(scores);
    pass.layer_embeds.push_back(encoded.patch_embeds.at(layers[pos]).value());
    pass.layer_patch_scores.push_back(scores.value());
    pass.layer_maps.push_back(localization::scores_to_map(scores, h, w));
  }
  pass.layers = layers;
  pass.map = localization::aggregate_maps(pass.layer_maps);
  pass.patch_scores = ag::mean_n(layer_scores).value();
  pass.output_map = pass.map.value();

  std::vector<Tensor> hsf_scores = config_.hsf.score_source == hsf::ScoreSource::kPerLayer
                                       ? pass.layer_patch_scores
                                       : std::vector<Tensor>(layers.size(), pass.patch_scores);
  if (options.map_noise_sigma > 0.0) {
    Rng rng(options.noise_seed);
    for (double& v : pass.output_map.data()) v = std::clamp(v + rng.normal(0.0, options.map_noise_sigma), 0.0, 1.0);
    const Tensor pooled = pool_patches(pass.output_map, enc_cfg.patch_size);
    std::fill(hsf_scores.begin(), hsf_scores.end(), pooled);
  }

  std::vector<hsf::LayerInput> hsf_inputs;
  for (std::size_t pos = 0; pos < layers.size(); ++pos) {
    hsf_inputs.push_back({encoded.patch_embeds.at(layers[pos]), hsf_scores[pos], &projection(pos)});
  }
  const Var semantic = hsf::semantic_embedding(hsf_inputs, global, config_.hsf);
  pass.score = hsf::image_score(semantic, pass.text_normal, pass.text_abnormal, config_.temperature);
  return pass;
}

localization::AnomalyOutput AdaClipModel::infer(const Tensor& image, const CaptionPair& captions,
                                                const ForwardOptions& options) {
  return forward(image, captions, options).output();
}

std::vector<Parameter*> AdaClipModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : prompts_.parameters())
    if (p->trainable) out.push_back(p);
  for (auto& proj : projections_)
    for (Parameter* p : proj.parameters())
      if (p->trainable) out.push_back(p);
  return out;
}

std::vector<Parameter*> AdaClipModel::all_parameters() {
  std::vector<Parameter*> out = weights_.parameters();
  for (Parameter* p : prompts_.parameters()) out.push_back(p);
  for (auto& proj : projections_)
    for (Parameter* p : proj.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> AdaClipModel::all_parameters() const {
  auto ps = const_cast<AdaClipModel*>(this)->all_parameters();
  return {ps.begin(), ps.end()};
}

}  // namespace adaclip
