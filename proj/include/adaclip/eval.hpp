#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adaclip/data.hpp"
#include "adaclip/localization.hpp"
#include "adaclip/model.hpp"

namespace adaclip::eval {

// Mann-Whitney statistic with mid-ranks for ties. Throws MetricError unless
// both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;
};

// Best F1 over thresholds at every distinct score (positive when score >= t),
// with the smallest threshold reaching it. Throws MetricError without positives.
F1Result max_f1(std::span<const double> scores, std::span<const int> labels);

struct Report {
  std::size_t num_images = 0;
  std::size_t num_abnormal = 0;
  std::size_t num_pixels = 0;
  double image_auroc = 0.0;
  double image_max_f1 = 0.0;
  double pixel_auroc = 0.0;
  double pixel_max_f1 = 0.0;
  // Same image metrics with the map maximum as the score.
  double image_auroc_max_baseline = 0.0;
  double image_max_f1_max_baseline = 0.0;
  std::string config_digest;

  std::string to_json() const;
  std::string to_text() const;
  void write(const std::filesystem::path& json_path, const std::filesystem::path& text_path) const;
};

// Produces the output for one test sample.
using Scorer = std::function<localization::AnomalyOutput(const data::Sample&)>;

// Image metrics from one score per image; pixel metrics pool every pixel of
// every image into one curve.
Report evaluate_outputs(const std::vector<data::Sample>& samples,
                        const std::vector<localization::AnomalyOutput>& outputs);

Report evaluate(const std::vector<data::Sample>& samples, const Scorer& scorer);

struct EvalOptions {
  // Per-pixel noise on the anomaly maps; zero disables it.
  double map_noise_sigma = 0.0;
};

// Runs the model on every record of the manifest. Noise streams derive from
// `seed` and the record index.
Report evaluate(AdaClipModel& model, const data::DatasetManifest& manifest, std::uint64_t seed,
                const EvalOptions& options = {});

}  // namespace adaclip::eval
