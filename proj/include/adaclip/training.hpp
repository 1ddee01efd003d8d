#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/data.hpp"
#include "adaclip/model.hpp"
#include "adaclip/tensor.hpp"

namespace adaclip::training {

struct LossWeights {
  double focal_map = 1.0;
  double dice_map = 1.0;
  double focal_score = 1.0;
};

struct TrainConfig {
  // Zero is allowed and leaves every parameter bit-unchanged.
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 5;
  std::size_t batch_size = 1;
  // Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;
  LossWeights weights;

  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

// Mean focal loss over all elements. Predictions are clamped to
// [1e-7, 1 - 1e-7]; targets must be 0 or 1.
ag::Var focal_loss(const ag::Var& pred, const Tensor& target, double alpha = 0.25, double gamma = 2.0);
double focal_loss(const Tensor& pred, const Tensor& target, double alpha = 0.25, double gamma = 2.0);

// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps).
ag::Var dice_loss(const ag::Var& pred, const Tensor& target, double eps = 1.0);
double dice_loss(const Tensor& pred, const Tensor& target, double eps = 1.0);

// w_fm Focal(map, mask) + w_dm Dice(map, mask) + w_fs Focal(score, label).
// The label must agree with the mask (label 1 iff the mask has a positive).
ag::Var total_loss(const ForwardPass& pass, const Tensor& mask, int label, const TrainConfig& config);

// v <- momentum v + g; value <- value - lr v. Velocities are keyed by
// parameter name and start at zero.
class SgdMomentum {
 public:
  SgdMomentum(const std::vector<Parameter*>& params, double lr, double momentum);

  // Applies one update to every trainable parameter in the constructor list
  // and clears their gradients. Throws UsageError if none has a gradient.
  void step();
  void scale_gradients(double factor);

  double lr() const { return lr_; }
  std::map<std::string, Tensor>& velocities() { return velocities_; }
  const std::map<std::string, Tensor>& velocities() const { return velocities_; }

 private:
  std::vector<Parameter*> params_;
  double lr_, momentum_;
  std::map<std::string, Tensor> velocities_;
};

struct StepRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global
  double loss = 0.0;      // mean sample loss of the batch
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Trains the prompts and projections on `samples` with the encoder frozen.
TrainResult train(AdaClipModel& model, const std::vector<data::Sample>& samples,
                  const data::DatasetManifest& manifest, const TrainConfig& config, SgdMomentum& optimizer,
                  const StepCallback& on_step = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps);

struct RefineConfig {
  std::size_t steps = 5;
  // Zero is allowed and leaves every parameter bit-unchanged.
  double lr = 0.01;
};

// Focal + dice of the map against the mask, with the configured weights.
ag::Var pixel_loss(const ForwardPass& pass, const Tensor& mask, const TrainConfig& config);

// Copies the model's prompts and runs `steps` plain gradient-descent updates
// of the pixel losses on one (image, mask) pair, touching only the copy.
// The model itself is left untouched.
prompts::PromptSet refine_prompts_per_image(AdaClipModel& model, const Tensor& image, const Tensor& mask,
                                            const CaptionPair& captions, std::size_t steps, double lr,
                                            const TrainConfig& loss_config = {});

}  // namespace adaclip::training
