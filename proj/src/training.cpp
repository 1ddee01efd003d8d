#include "adaclip/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "adaclip/errors.hpp"
#include "adaclip/random.hpp"

namespace adaclip::training {

using ag::Var;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning_rate must be finite and non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be non-negative");
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ConfigError("focal_alpha must be in (0, 1)");
  if (!(dice_eps > 0.0)) throw ConfigError("dice_eps must be positive");
}

namespace {

void check_target(const Tensor& pred, const Tensor& target, const char* where) {
  if (pred.shape() != target.shape())
    throw UsageError(std::string(where) + ": prediction " + shape_to_string(pred.shape()) + " vs target " +
                     shape_to_string(target.shape()));
  for (double t : target.data())
    if (t != 0.0 && t != 1.0) throw InputError(std::string(where) + ": target values must be 0 or 1");
}

}  // namespace

Var focal_loss(const Var& pred, const Tensor& target, double alpha, double gamma) {
  const Tensor& p = pred.value();
  check_target(p, target, "focal_loss");
  p.require_finite("focal_loss");
  const std::size_t n = p.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    const double pt = target[i] == 1.0 ? c : 1.0 - c;
    const double at = target[i] == 1.0 ? alpha : 1.0 - alpha;
    total += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return ag::make_op(Tensor::scalar(total * inv_n), {pred},
                     [target, alpha, gamma, inv_n](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                                                   std::span<Tensor* const> grads) {
                       if (!grads[0]) return;
                       const Tensor& pv = *in[0];
                       const double scale = g.item() * inv_n;
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         if (pv[i] < kProbClamp || pv[i] > 1.0 - kProbClamp) continue;
                         const double c = pv[i];
                         const bool pos = target[i] == 1.0;
                         const double pt = pos ? c : 1.0 - c;
                         const double at = pos ? alpha : 1.0 - alpha;
                         const double q = 1.0 - pt;
                         // d/dpt of -at q^gamma log(pt)
                         double d = -at * std::pow(q, gamma) / pt;
                         if (gamma != 0.0) d += at * gamma * std::pow(q, gamma - 1.0) * std::log(pt);
                         (*grads[0])[i] += scale * (pos ? d : -d);
                       }
                     });
}

double focal_loss(const Tensor& pred, const Tensor& target, double alpha, double gamma) {
  return focal_loss(Var::constant(pred), target, alpha, gamma).value().item();
}

Var dice_loss(const Var& pred, const Tensor& target, double eps) {
  const Tensor& p = pred.value();
  check_target(p, target, "dice_loss");
  p.require_finite("dice_loss");
  if (!(eps > 0.0)) throw UsageError("dice_loss: eps must be positive");
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || p[i] > 1.0) throw InputError("dice_loss: predictions must lie in [0, 1]");
    inter += p[i] * target[i];
    sp += p[i];
    st += target[i];
  }
  const double num = 2.0 * inter + eps, den = sp + st + eps;
  return ag::make_op(Tensor::scalar(1.0 - num / den), {pred},
                     [target, num, den](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                                        std::span<Tensor* const> grads) {
                       if (!grads[0]) return;
                       const double s = g.item() / (den * den);
                       for (std::size_t i = 0; i < target.size(); ++i)
                         (*grads[0])[i] -= s * (2.0 * target[i] * den - num);
                     });
}

double dice_loss(const Tensor& pred, const Tensor& target, double eps) {
  return dice_loss(Var::constant(pred), target, eps).value().item();
}

namespace {

void check_mask(const ForwardPass& pass, const Tensor& mask) {
  if (mask.shape() != pass.map.value().shape())
    throw InputError("mask extents " + shape_to_string(mask.shape()) + " differ from map extents " +
                     shape_to_string(pass.map.value().shape()));
}

}  // namespace

Var pixel_loss(const ForwardPass& pass, const Tensor& mask, const TrainConfig& config) {
  check_mask(pass, mask);
  const auto& w = config.weights;
  return ag::add(ag::scale(focal_loss(pass.map, mask, config.focal_alpha, config.focal_gamma), w.focal_map),
                 ag::scale(dice_loss(pass.map, mask, config.dice_eps), w.dice_map));
}

Var total_loss(const ForwardPass& pass, const Tensor& mask, int label, const TrainConfig& config) {
  check_mask(pass, mask);
  if (label != 0 && label != 1) throw InputError("label must be 0 or 1");
  const bool positive = std::any_of(mask.data().begin(), mask.data().end(), [](double v) { return v != 0.0; });
  if (positive != (label == 1)) throw InputError("label " + std::to_string(label) + " disagrees with the mask");
  const Var score_term = ag::scale(
      focal_loss(pass.score, Tensor::scalar(static_cast<double>(label)), config.focal_alpha, config.focal_gamma),
      config.weights.focal_score);
  return ag::add(pixel_loss(pass, mask, config), score_term);
}

// ---- optimizer ----

SgdMomentum::SgdMomentum(const std::vector<Parameter*>& params, double lr, double momentum)
    : lr_(lr), momentum_(momentum) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    velocities_.emplace(p->name, Tensor(p->value.shape()));
  }
}

void SgdMomentum::scale_gradients(double factor) {
  for (Parameter* p : params_)
    if (p->has_gradient)
      for (double& g : p->gradient.data()) g *= factor;
}

void SgdMomentum::step() {
  const bool any = std::any_of(params_.begin(), params_.end(), [](const Parameter* p) { return p->has_gradient; });
  if (!any) throw UsageError("sgd step: no gradients populated (run backward first)");
  for (Parameter* p : params_) {
    Tensor& v = velocities_.at(p->name);
    auto value = p->value.data();
    auto vel = v.data();
    if (p->has_gradient) {
      const auto grad = p->gradient.data();
      for (std::size_t i = 0; i < vel.size(); ++i) vel[i] = momentum_ * vel[i] + grad[i];
    } else {
      for (double& x : vel) x *= momentum_;
    }
    for (std::size_t i = 0; i < vel.size(); ++i) value[i] -= lr_ * vel[i];
    p->zero_grad();
  }
}

// ---- loop ----

TrainResult train(AdaClipModel& model, const std::vector<data::Sample>& samples,
                  const data::DatasetManifest& manifest, const TrainConfig& config, SgdMomentum& optimizer,
                  const StepCallback& on_step) {
  config.validate();
  if (samples.empty()) throw InputError("train: dataset is empty");

  std::map<std::string, CaptionPair> captions;
  for (const auto& s : samples) {
    if (captions.count(s.category)) continue;
    const auto [normal, abnormal] = data::make_captions(s.category, manifest);
    captions.emplace(s.category, model.tokenize_captions(normal, abnormal));
  }

  TrainResult result;
  std::size_t step = 0;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, 100 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      double batch_total = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const data::Sample& s = samples[order[b]];
        const ForwardPass pass = model.forward(s.image, captions.at(s.category));
        const Var loss = total_loss(pass, s.mask, s.label, config);
        ag::backward(loss);
        batch_total += loss.value().item();
      }
      const auto count = static_cast<double>(end - begin);
      if (end - begin > 1) optimizer.scale_gradients(1.0 / count);
      optimizer.step();
      ++step;
      const StepRecord rec{epoch, step, batch_total / count};
      result.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_total += batch_total;
      epoch_count += end - begin;
      if (config.max_steps != 0 && step >= config.max_steps) break;
    }
    result.epoch_mean_loss.push_back(epoch_total / static_cast<double>(epoch_count));
    if (config.max_steps != 0 && step >= config.max_steps) break;
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw EnvironmentError("cannot write " + path.string());
  out << "epoch,step,loss\n";
  char buf[64];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof buf, "%.17g", s.loss);
    out << s.epoch << ',' << s.step << ',' << buf << '\n';
  }
  if (!out) throw EnvironmentError("write failed: " + path.string());
}

// ---- per-image refinement ----

prompts::PromptSet refine_prompts_per_image(AdaClipModel& model, const Tensor& image, const Tensor& mask,
                                            const CaptionPair& captions, std::size_t steps, double lr,
                                            const TrainConfig& loss_config) {
  if (mask.shape() != image.shape()) throw InputError("refine: mask extents differ from image");
  for (double v : mask.data())
    if (v != 0.0 && v != 1.0) throw InputError("refine: mask is not binary");
  prompts::PromptSet refined = model.prompt_set();
  std::vector<Parameter*> params = refined.parameters();
  SgdMomentum gd(params, lr, 0.0);
  ForwardOptions options;
  options.prompt_override = &refined;
  options.freeze_projection = true;
  for (std::size_t s = 0; s < steps; ++s) {
    const ForwardPass pass = model.forward(image, captions, options);
    ag::backward(pixel_loss(pass, mask, loss_config));
    gd.step();
  }
  return refined;
}

}  // namespace adaclip::training
