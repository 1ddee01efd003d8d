#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "adaclip/errors.hpp"
#include "adaclip/model.hpp"
#include "adaclip/prompts.hpp"
#include "adaclip/training.hpp"

using namespace adaclip;
using namespace adaclip::prompts;
using ag::Var;

namespace {

encoders::LayerPrompts filled(std::size_t depth, std::size_t rows, std::size_t width, double v) {
  encoders::LayerPrompts out;
  for (std::size_t j = 0; j < depth; ++j) out.push_back(Var::constant(Tensor(Shape{rows, width}, v)));
  return out;
}

encoders::LayerPrompts random_blocks(std::size_t depth, std::size_t rows, std::size_t width, std::uint64_t seed) {
  encoders::LayerPrompts out;
  for (std::size_t j = 0; j < depth; ++j)
    out.push_back(Var::constant(testing::random_tensor({rows, width}, seed * 31 + j)));
  return out;
}

PromptConfig flags(bool s, bool d) {
  PromptConfig c;
  c.depth = 2;
  c.length = 3;
  c.enable_static = s;
  c.enable_dynamic = d;
  return c;
}

void randomize_dpg(PromptSet& p, std::uint64_t seed) {
  p.dpg_image_w.value = testing::random_tensor(p.dpg_image_w.value.shape(), seed, 0.05);
  p.dpg_text_w.value = testing::random_tensor(p.dpg_text_w.value.shape(), seed + 1, 0.05);
  p.dpg_image_b.value = testing::random_tensor(p.dpg_image_b.value.shape(), seed + 2, 0.05);
}

}  // namespace

TEST_CASE("prompt config invariants") {
  PromptConfig c;
  CHECK_NOTHROW(c.validate(6));
  CHECK_THROWS_AS(c.validate(3), ConfigError);
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(6), ConfigError);
  c.depth = 1;
  c.length = 0;
  CHECK_THROWS_AS(c.validate(6), ConfigError);
}

TEST_CASE("prompt set shapes and flags") {
  const auto mc = testing::tiny_model_config();
  const auto p = PromptSet::initialize(mc.encoder, mc.prompts, 5);
  REQUIRE(p.static_image.size() == 2);
  REQUIRE(p.static_text.size() == 2);
  CHECK(p.static_image[0].value.shape() == Shape{3, 16});
  CHECK(p.static_text[1].value.shape() == Shape{3, 16});
  CHECK(p.dpg_image_w.value.shape() == Shape{16, 2 * 3 * 16});
  CHECK(p.dpg_text_b.value.shape() == Shape{2 * 3 * 16});
  for (const Parameter* q : p.parameters()) CHECK(q->trainable);
  CHECK(p.dpg_image_w.value.max() == 0.0);
  CHECK(p.dpg_image_w.value.min() == 0.0);
  CHECK(PromptSet::initialize(mc.encoder, mc.prompts, 5).digest() == p.digest());
  CHECK(PromptSet::initialize(mc.encoder, mc.prompts, 6).digest() != p.digest());
}

TEST_CASE("dynamic prompts") {
  const auto mc = testing::tiny_model_config();
  const auto w = encoders::EncoderWeights::initialize(mc.encoder, encoders::Vocabulary::builtin().size(), 1);
  auto p = PromptSet::initialize(mc.encoder, mc.prompts, 5);
  const Tensor img = testing::uniform_tensor({32, 32}, 8);

  SUBCASE("zero generator gives zero prompts") {
    const auto d = generate_dynamic(img, w, p);
    REQUIRE(d.image.size() == 2);
    REQUIRE(d.text.size() == 2);
    for (const auto& b : d.image) {
      CHECK(b.value().shape() == Shape{3, 16});
      CHECK(b.value().max() == 0.0);
      CHECK(b.value().min() == 0.0);
    }
  }
  SUBCASE("deterministic and image dependent") {
    randomize_dpg(p, 3);
    const auto a = generate_dynamic(img, w, p);
    const auto b = generate_dynamic(img, w, p);
    const auto c = generate_dynamic(testing::uniform_tensor({32, 32}, 9), w, p);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(a.image[j].value() == b.image[j].value());
      CHECK(a.text[j].value() == b.text[j].value());
      CHECK_FALSE(a.image[j].value() == c.image[j].value());
    }
  }
  SUBCASE("bad class token") {
    CHECK_THROWS_AS(dynamic_from_class_token(Tensor(Shape{4}), w, p), UsageError);
  }
}

TEST_CASE("combine_hybrid examples") {
  const auto s = filled(2, 3, 4, 1.0);
  const auto d = filled(2, 3, 4, 2.0);
  const auto both = combine_hybrid(s, d, flags(true, true), 4);
  for (const auto& b : both) CHECK(b.value() == Tensor(Shape{3, 4}, 3.0));

  const auto rs = random_blocks(2, 3, 4, 1);
  const auto static_only = combine_hybrid(rs, d, flags(true, false), 4);
  for (std::size_t j = 0; j < 2; ++j) CHECK(static_only[j].value() == rs[j].value());
  const auto static_only_empty = combine_hybrid(rs, {}, flags(true, false), 4);
  for (std::size_t j = 0; j < 2; ++j) CHECK(static_only_empty[j].value() == rs[j].value());

  const auto rd = random_blocks(2, 3, 4, 2);
  const auto dynamic_only = combine_hybrid(s, rd, flags(false, true), 4);
  for (std::size_t j = 0; j < 2; ++j) CHECK(dynamic_only[j].value() == rd[j].value());

  const auto none = combine_hybrid(s, d, flags(false, false), 4);
  REQUIRE(none.size() == 2);
  for (const auto& b : none) CHECK(b.value() == Tensor(Shape{3, 4}, 0.0));

  CHECK_THROWS_AS(combine_hybrid(s, filled(2, 3, 5, 1.0), flags(true, true), 4), UsageError);
  CHECK_THROWS_AS(combine_hybrid(s, filled(1, 3, 4, 1.0), flags(true, true), 4), UsageError);
}

TEST_CASE("combine_hybrid is elementwise addition") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto a = random_blocks(2, 3, 4, seed);
    const auto b = random_blocks(2, 3, 4, seed + 100);
    const auto c = random_blocks(2, 3, 4, seed + 200);
    const auto cfg = flags(true, true);
    const auto ab = combine_hybrid(a, b, cfg, 4);
    const auto ba = combine_hybrid(b, a, cfg, 4);
    const auto ab_c = combine_hybrid(ab, c, cfg, 4);
    const auto a_bc = combine_hybrid(a, combine_hybrid(b, c, cfg, 4), cfg, 4);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(ab[j].value() == ba[j].value());
      for (std::size_t i = 0; i < ab[j].value().size(); ++i) {
        CHECK(ab[j].value()[i] == a[j].value()[i] + b[j].value()[i]);
        CHECK(ab_c[j].value()[i] == doctest::Approx(a_bc[j].value()[i]).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("disabled dynamic branch ignores the generator") {
  auto mc = testing::tiny_model_config();
  mc.prompts.enable_dynamic = false;
  AdaClipModel m(mc, encoders::Vocabulary::builtin(), 4);
  const auto cap = m.tokenize_captions("a photo of normal squares", "a photo of damaged squares");
  const Tensor img = testing::uniform_tensor({32, 32}, 2);
  const auto before = m.infer(img, cap);
  randomize_dpg(m.prompt_set(), 17);
  const auto after = m.infer(img, cap);
  CHECK(before.aggregated_map == after.aggregated_map);
  CHECK(before.image_score == after.image_score);
}

TEST_CASE("every prompt parameter receives gradient") {
  const auto mc = testing::tiny_model_config();
  AdaClipModel m(mc, encoders::Vocabulary::builtin(), 4);
  const auto cap = m.tokenize_captions("a photo of normal squares", "a photo of damaged squares");
  const Tensor img = testing::uniform_tensor({32, 32}, 2);
  const Tensor mask = testing::block_mask(32);
  const auto pass = m.forward(img, cap);
  training::TrainConfig tc;
  ag::backward(training::total_loss(pass, mask, 1, tc));
  for (Parameter* p : m.prompt_set().parameters()) {
    INFO(p->name);
    REQUIRE(p->has_gradient);
    double norm = 0.0;
    for (double g : p->gradient.data()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("per-image refinement") {
  const auto mc = testing::tiny_model_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    AdaClipModel m(mc, encoders::Vocabulary::builtin(), seed);
    const auto cap = m.tokenize_captions("a photo of normal squares", "a photo of damaged squares");
    const Tensor img = testing::uniform_tensor({32, 32}, seed + 40);
    const Tensor mask = testing::block_mask(32);
    const std::string digest = m.prompt_set().digest();
    const std::string frozen = m.frozen_digest();

    auto same = training::refine_prompts_per_image(m, img, mask, cap, 0, 0.01);
    CHECK(same.digest() == digest);

    training::TrainConfig tc;
    auto loss_with = [&](PromptSet& p) {
      ForwardOptions o;
      o.prompt_override = &p;
      o.freeze_projection = true;
      return training::pixel_loss(m.forward(img, cap, o), mask, tc).value()[0];
    };
    auto original = m.prompt_set();
    const double before = loss_with(original);
    auto refined = training::refine_prompts_per_image(m, img, mask, cap, 1, 1e-3);
    CHECK(loss_with(refined) <= before + 1e-9);
    CHECK(refined.digest() != digest);
    CHECK(m.prompt_set().digest() == digest);
    CHECK(m.frozen_digest() == frozen);
  }
}

TEST_CASE("refinement rejects a non-binary mask") {
  AdaClipModel m(testing::tiny_model_config(), encoders::Vocabulary::builtin(), 0);
  const auto cap = m.tokenize_captions("a photo of normal squares", "a photo of damaged squares");
  Tensor mask = testing::block_mask(32);
  mask.at(0, 0) = 0.5;
  CHECK_THROWS_AS(training::refine_prompts_per_image(m, Tensor(Shape{32, 32}, 0.5), mask, cap, 1, 0.01),
                  InputError);
}
