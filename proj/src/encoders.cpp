#include "adaclip/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "adaclip/digest.hpp"
#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::encoders {

using ag::Var;

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder config: " + what); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (embed_dim_v == 0 || embed_dim_t == 0 || shared_dim == 0) fail("embedding widths must be positive");
  if (num_heads == 0 || embed_dim_v % num_heads != 0 || embed_dim_t % num_heads != 0) {
    fail("embedding widths must be divisible by num_heads");
  }
  if (num_layers == 0) fail("num_layers must be positive");
  if (context_len < 2) fail("context_len must hold at least BOS and EOS");
  if (hierarchy_layers.empty()) fail("hierarchy_layers must not be empty");
  for (std::size_t i = 0; i < hierarchy_layers.size(); ++i) {
    const std::size_t layer = hierarchy_layers[i];
    if (layer < 1 || layer > num_layers) fail("hierarchy layer " + std::to_string(layer) + " out of range");
    if (i > 0 && layer <= hierarchy_layers[i - 1]) fail("hierarchy_layers must be strictly increasing");
  }
}

// --- vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    index_.emplace(words_[i], static_cast<TokenId>(kNumSpecials + i));
  }
}

Vocabulary Vocabulary::builtin() {
  return Vocabulary({"a",      "photo",     "of",      "normal", "damaged", "flawless", "perfect",
                     "broken", "defective", "object",  "the",    "with",    "without",  "defect",
                     "squares", "disks",    "bars",    "square", "disk",    "bar"});
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EnvironmentError("cannot open vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t context_len) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  std::istringstream words{std::string(text)};
  std::string word;
  while (words >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    seq.ids.push_back(vocab.lookup(word));
  }
  seq.ids.push_back(Vocabulary::kEos);
  if (seq.ids.size() > context_len) {
    throw InputError("tokenize: \"" + std::string(text) + "\" needs " + std::to_string(seq.ids.size()) +
                     " tokens, context_len is " + std::to_string(context_len));
  }
  seq.last_index = seq.ids.size() - 1;
  seq.ids.resize(context_len, Vocabulary::kPad);
  return seq;
}

// --- weights ---------------------------------------------------------------

std::vector<Parameter*> TransformerLayer::parameters() {
  return {&ln1_gamma, &ln1_beta, &wq, &bq, &wk,       &bk,       &wv,    &bv,
          &wo,        &bo,       &ln2_gamma, &ln2_beta, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

namespace {

constexpr std::size_t kMlpRatio = 4;

Parameter frozen(std::string name, Tensor value) { return Parameter(std::move(name), std::move(value), false); }

Parameter gaussian_matrix(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return frozen(name, rng.normal_tensor(Shape{fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in))));
}

TransformerLayer make_layer(const std::string& prefix, std::size_t width, Rng& rng) {
  TransformerLayer l;
  const std::size_t hidden = kMlpRatio * width;
  l.ln1_gamma = frozen(prefix + "ln1.gamma", Tensor(Shape{width}, 1.0));
  l.ln1_beta = frozen(prefix + "ln1.beta", Tensor(Shape{width}));
  l.wq = gaussian_matrix(prefix + "attn.wq", width, width, rng);
  l.bq = frozen(prefix + "attn.bq", Tensor(Shape{width}));
  l.wk = gaussian_matrix(prefix + "attn.wk", width, width, rng);
  l.bk = frozen(prefix + "attn.bk", Tensor(Shape{width}));
  l.wv = gaussian_matrix(prefix + "attn.wv", width, width, rng);
  l.bv = frozen(prefix + "attn.bv", Tensor(Shape{width}));
  l.wo = gaussian_matrix(prefix + "attn.wo", width, width, rng);
  l.bo = frozen(prefix + "attn.bo", Tensor(Shape{width}));
  l.ln2_gamma = frozen(prefix + "ln2.gamma", Tensor(Shape{width}, 1.0));
  l.ln2_beta = frozen(prefix + "ln2.beta", Tensor(Shape{width}));
  l.fc1_w = gaussian_matrix(prefix + "mlp.fc1.w", width, hidden, rng);
  l.fc1_b = frozen(prefix + "mlp.fc1.b", Tensor(Shape{hidden}));
  l.fc2_w = gaussian_matrix(prefix + "mlp.fc2.w", hidden, width, rng);
  l.fc2_b = frozen(prefix + "mlp.fc2.b", Tensor(Shape{width}));
  return l;
}

}  // namespace

EncoderWeights EncoderWeights::initialize(const EncoderConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  config.validate();
  EncoderWeights w;
  w.config = config;
  const std::size_t dv = config.embed_dim_v, dl = config.embed_dim_t, du = config.shared_dim;
  const std::size_t pp = config.patch_size * config.patch_size;

  Rng image_rng(mix_seed(seed, 1));
  w.patch_embed = gaussian_matrix("encoder.image.patch_embed", pp, dv, image_rng);
  w.class_token = frozen("encoder.image.class_token", image_rng.normal_tensor(Shape{dv}, 1.0 / std::sqrt(double(dv))));
  w.image_pos = frozen("encoder.image.pos",
                       image_rng.normal_tensor(Shape{config.num_patches() + 1, dv}, 1.0 / std::sqrt(double(dv))));
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    w.image_layers.push_back(make_layer("encoder.image.layer" + std::to_string(i + 1) + ".", dv, image_rng));
  }
  w.image_ln_post_gamma = frozen("encoder.image.ln_post.gamma", Tensor(Shape{dv}, 1.0));
  w.image_ln_post_beta = frozen("encoder.image.ln_post.beta", Tensor(Shape{dv}));
  w.image_proj = gaussian_matrix("encoder.image.proj", dv, du, image_rng);
  w.image_proj_bias = frozen("encoder.image.proj_bias", Tensor(Shape{du}));

  Rng text_rng(mix_seed(seed, 2));
  w.token_embedding = frozen("encoder.text.token_embedding",
                             text_rng.normal_tensor(Shape{vocab_size, dl}, 1.0 / std::sqrt(double(dl))));
  w.text_pos = frozen("encoder.text.pos",
                      text_rng.normal_tensor(Shape{config.context_len, dl}, 1.0 / std::sqrt(double(dl))));
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    w.text_layers.push_back(make_layer("encoder.text.layer" + std::to_string(i + 1) + ".", dl, text_rng));
  }
  w.text_ln_final_gamma = frozen("encoder.text.ln_final.gamma", Tensor(Shape{dl}, 1.0));
  w.text_ln_final_beta = frozen("encoder.text.ln_final.beta", Tensor(Shape{dl}));
  w.text_proj = gaussian_matrix("encoder.text.proj", dl, du, text_rng);
  return w;
}

std::vector<Parameter*> EncoderWeights::parameters() {
  std::vector<Parameter*> out{&patch_embed, &class_token, &image_pos};
  for (auto& l : image_layers)
    for (Parameter* p : l.parameters()) out.push_back(p);
  for (Parameter* p : {&image_ln_post_gamma, &image_ln_post_beta, &image_proj, &image_proj_bias, &token_embedding,
                       &text_pos}) {
    out.push_back(p);
  }
  for (auto& l : text_layers)
    for (Parameter* p : l.parameters()) out.push_back(p);
  for (Parameter* p : {&text_ln_final_gamma, &text_ln_final_beta, &text_proj}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> EncoderWeights::parameters() const {
  auto mutable_params = const_cast<EncoderWeights*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::string EncoderWeights::digest() const { return parameters_digest(parameters()); }

// --- forward passes --------------------------------------------------------

namespace {

using Mask = std::shared_ptr<const std::vector<unsigned char>>;

Var view(const Parameter& p) { return Var::view(p.value); }

Var attention(const TransformerLayer& l, const Var& h, std::size_t heads, const Mask& mask) {
  const std::size_t width = h.value().cols();
  const std::size_t head_dim = width / heads;
  const Var q = ag::linear(h, view(l.wq), view(l.bq));
  const Var k = ag::linear(h, view(l.wk), view(l.bk));
  const Var v = ag::linear(h, view(l.wv), view(l.bv));
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t off = head * head_dim;
    const Var scores =
        ag::scale(ag::matmul_nt(ag::slice_cols(q, off, head_dim), ag::slice_cols(k, off, head_dim)), scale);
    outs.push_back(ag::matmul(ag::masked_softmax_rows(scores, mask), ag::slice_cols(v, off, head_dim)));
  }
  return ag::linear(heads == 1 ? outs.front() : ag::concat_cols(outs), view(l.wo), view(l.bo));
}

// Pre-norm residual block.
Var run_layer(const TransformerLayer& l, const Var& x, std::size_t heads, const Mask& mask) {
  const Var a = attention(l, ag::layer_norm(x, view(l.ln1_gamma), view(l.ln1_beta)), heads, mask);
  const Var x1 = ag::add(x, a);
  const Var h = ag::layer_norm(x1, view(l.ln2_gamma), view(l.ln2_beta));
  const Var m = ag::linear(ag::gelu(ag::linear(h, view(l.fc1_w), view(l.fc1_b))), view(l.fc2_w), view(l.fc2_b));
  return ag::add(x1, m);
}

void check_prompts(const LayerPrompts& prompts, std::size_t num_layers, std::size_t width) {
  if (prompts.empty() || prompts.size() > num_layers) {
    throw UsageError("encoder: prompt depth " + std::to_string(prompts.size()) + " outside [1, " +
                     std::to_string(num_layers) + "]");
  }
  const Var& first = prompts.front();
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    if (!prompts[j].defined()) throw UsageError("encoder: missing prompts for layer " + std::to_string(j + 1));
    const auto& shape = prompts[j].shape();
    if (shape.size() != 2 || shape[1] != width || shape != first.shape() || shape[0] == 0) {
      throw UsageError("encoder: prompt block for layer " + std::to_string(j + 1) + " has shape " +
                       shape_to_string(shape));
    }
  }
}

// Runs the layer stack with the prompt schedule. `keep_rows` vanilla rows
// lead the sequence; prompt rows follow them.
template <typename Record>
Var run_stack(const std::vector<TransformerLayer>& layers, Var x, std::size_t keep_rows, std::size_t heads,
              const LayerPrompts* prompts, const Mask& vanilla_mask, const Mask& prompted_mask, Record&& record,
              RowTrace* trace) {
  Var carry;
  const std::size_t depth = prompts ? prompts->size() : 0;
  for (std::size_t j = 1; j <= layers.size(); ++j) {
    const TransformerLayer& layer = layers[j - 1];
    std::size_t in_rows = x.value().rows();
    if (j <= depth) {
      const Var& p = (*prompts)[j - 1];
      const Var joined = ag::concat_rows({x, p});
      in_rows = joined.value().rows();
      const Var out = run_layer(layer, joined, heads, prompted_mask);
      x = ag::slice_rows(out, 0, keep_rows);
      if (j == depth) carry = ag::slice_rows(out, keep_rows, p.value().rows());
    } else if (carry.defined()) {
      const std::size_t m = carry.value().rows();
      const Var joined = ag::concat_rows({x, carry});
      in_rows = joined.value().rows();
      const Var out = run_layer(layer, joined, heads, prompted_mask);
      x = ag::slice_rows(out, 0, keep_rows);
      carry = ag::slice_rows(out, keep_rows, m);
    } else {
      x = run_layer(layer, x, heads, vanilla_mask);
    }
    if (trace) trace->push_back({in_rows, x.value().rows() + (carry.defined() ? carry.value().rows() : 0)});
    record(j, x);
  }
  return x;
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  const std::size_t h = image.rows(), w = image.cols();
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  Tensor out(Shape{gh * gw, patch_size * patch_size});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x) {
          const double pixel = image.at(py * patch_size + y, px * patch_size + x);
          out[(py * gw + px) * patch_size * patch_size + y * patch_size + x] = (pixel - 0.5) / 0.25;
        }
  return out;
}

ImageEncoding encode_image(const EncoderWeights& weights, const Tensor& image, const LayerPrompts* prompts,
                           RowTrace* trace) {
  const EncoderConfig& cfg = weights.config;
  if (image.rank() != 2 || image.rows() != cfg.image_size || image.cols() != cfg.image_size) {
    throw InputError("encode_image: expected a " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " image, got " + shape_to_string(image.shape()));
  }
  if (prompts) check_prompts(*prompts, cfg.num_layers, cfg.embed_dim_v);

  const std::size_t n = cfg.num_patches();
  const std::size_t dv = cfg.embed_dim_v;
  // Patch pixels and the frozen embedding are constants: fold them eagerly.
  const Tensor tokens =
      ag::matmul(Var::constant(patchify(image, cfg.patch_size)), view(weights.patch_embed)).value();
  Tensor embedded(Shape{n + 1, dv});
  for (std::size_t c = 0; c < dv; ++c) embedded[c] = weights.class_token.value[c] + weights.image_pos.value[c];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dv; ++c)
      embedded[(i + 1) * dv + c] = tokens[i * dv + c] + weights.image_pos.value[(i + 1) * dv + c];
  Var x = Var::constant(std::move(embedded));

  ImageEncoding enc;
  const auto& wanted = cfg.hierarchy_layers;
  x = run_stack(weights.image_layers, x, n + 1, cfg.num_heads, prompts, nullptr, nullptr,
                [&](std::size_t layer, const Var& h) {
                  if (std::find(wanted.begin(), wanted.end(), layer) != wanted.end()) {
                    enc.patch_embeds.emplace(layer, ag::slice_rows(h, 1, n));
                  }
                },
                trace);
  const Var cls = ag::layer_norm(ag::slice_rows(x, 0, 1), view(weights.image_ln_post_gamma),
                                 view(weights.image_ln_post_beta));
  enc.class_final = ag::reshape(cls, Shape{dv});
  return enc;
}

namespace {

// Text queries see earlier real tokens and every prompt row; prompt queries
// see all real tokens and all prompt rows. PAD keys are never visible.
Mask text_mask(const TokenSequence& seq, std::size_t prompt_rows) {
  const std::size_t len = seq.ids.size();
  const std::size_t total = len + prompt_rows;
  auto mask = std::make_shared<std::vector<unsigned char>>(total * total, 0);
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = 0; j < total; ++j) {
      bool visible;
      if (j >= len) {
        visible = true;
      } else if (j > seq.last_index) {
        visible = false;
      } else {
        visible = i >= len || j <= i;
      }
      (*mask)[i * total + j] = visible ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace

Var encode_text(const EncoderWeights& weights, const TokenSequence& seq, const LayerPrompts* prompts,
                RowTrace* trace) {
  const EncoderConfig& cfg = weights.config;
  const std::size_t len = cfg.context_len;
  const std::size_t dl = cfg.embed_dim_t;
  if (seq.ids.size() != len || seq.last_index >= len) {
    throw InputError("encode_text: token sequence does not match context_len " + std::to_string(len));
  }
  if (prompts) check_prompts(*prompts, cfg.num_layers, dl);

  const Tensor& table = weights.token_embedding.value;
  Tensor embedded(Shape{len, dl});
  for (std::size_t i = 0; i < len; ++i) {
    const TokenId id = seq.ids[i];
    if (id >= table.rows()) throw InputError("encode_text: token id " + std::to_string(id) + " outside vocabulary");
    for (std::size_t c = 0; c < dl; ++c) embedded[i * dl + c] = table[id * dl + c] + weights.text_pos.value[i * dl + c];
  }

  const std::size_t prompt_rows = prompts ? prompts->front().value().rows() : 0;
  const Mask vanilla = text_mask(seq, 0);
  const Mask prompted = prompt_rows ? text_mask(seq, prompt_rows) : vanilla;
  Var x = run_stack(weights.text_layers, Var::constant(std::move(embedded)), len, cfg.num_heads, prompts, vanilla,
                    prompted, [](std::size_t, const Var&) {}, trace);
  const Var last = ag::layer_norm(ag::slice_rows(x, seq.last_index, 1), view(weights.text_ln_final_gamma),
                                  view(weights.text_ln_final_beta));
  return ag::reshape(ag::matmul(last, view(weights.text_proj)), Shape{cfg.shared_dim});
}

Var image_global(const EncoderWeights& weights, const Var& class_final) {
  const std::size_t dv = weights.config.embed_dim_v;
  if (class_final.shape() != Shape{dv}) {
    throw UsageError("image_global: expected a length-" + std::to_string(dv) + " class token, got " +
                     shape_to_string(class_final.shape()));
  }
  const Var y = ag::linear(ag::reshape(class_final, Shape{1, dv}), view(weights.image_proj),
                           view(weights.image_proj_bias));
  return ag::reshape(y, Shape{weights.config.shared_dim});
}

}  // namespace adaclip::encoders
