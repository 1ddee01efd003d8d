#include "adaclip/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

#include "adaclip/errors.hpp"
#include "adaclip/hsf.hpp"
#include "adaclip/random.hpp"

namespace adaclip::eval {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* where) {
  if (scores.size() != labels.size())
    throw UsageError(std::string(where) + ": " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InputError(std::string(where) + ": labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DomainError(std::string(where) + ": non-finite score");
  }
}

std::vector<std::size_t> ascending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "auroc");
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("auroc undefined: labels contain a single class");
  const auto order = ascending_order(scores);
  // Twice the rank sum keeps mid-ranks integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_mid = i + 1 + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) twice_rank_sum += twice_mid;
    i = j;
  }
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(pos) * (pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

F1Result max_f1(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "max_f1");
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) throw MetricError("max_f1 undefined: no positive labels");
  auto order = ascending_order(scores);
  std::reverse(order.begin(), order.end());
  F1Result best{-1.0, 0.0};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    if (f1 >= best.f1) best = {f1, t};
  }
  return best;
}

// ---- reports ----

std::string Report::to_json() const {
  nlohmann::ordered_json j;
  j["num_images"] = num_images;
  j["num_abnormal"] = num_abnormal;
  j["num_pixels"] = num_pixels;
  j["pixel_metrics"] = "pooled over all pixels of all images";
  j["image_auroc"] = image_auroc;
  j["image_max_f1"] = image_max_f1;
  j["pixel_auroc"] = pixel_auroc;
  j["pixel_max_f1"] = pixel_max_f1;
  j["image_auroc_max_baseline"] = image_auroc_max_baseline;
  j["image_max_f1_max_baseline"] = image_max_f1_max_baseline;
  j["config_digest"] = config_digest;
  return j.dump(2) + "\n";
}

std::string Report::to_text() const {
  char buf[128];
  std::string out = "# pixel metrics pool all pixels of all test images into one curve\n";
  std::snprintf(buf, sizeof buf, "images %zu (abnormal %zu), pixels %zu\n", num_images, num_abnormal, num_pixels);
  out += buf;
  out += "metric                 value\n";
  const std::pair<const char*, double> rows[] = {
      {"image_auroc", image_auroc},
      {"image_max_f1", image_max_f1},
      {"pixel_auroc", pixel_auroc},
      {"pixel_max_f1", pixel_max_f1},
      {"image_auroc (max)", image_auroc_max_baseline},
      {"image_max_f1 (max)", image_max_f1_max_baseline},
  };
  for (const auto& [name, v] : rows) {
    std::snprintf(buf, sizeof buf, "%-22s %.6f\n", name, v);
    out += buf;
  }
  out += "config_digest " + config_digest + "\n";
  return out;
}

void Report::write(const std::filesystem::path& json_path, const std::filesystem::path& text_path) const {
  for (const auto& [path, body] : {std::pair{json_path, to_json()}, std::pair{text_path, to_text()}}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw EnvironmentError("cannot write " + path.string());
    out << body;
    if (!out) throw EnvironmentError("write failed: " + path.string());
  }
}

// ---- evaluation ----

Report evaluate_outputs(const std::vector<data::Sample>& samples,
                        const std::vector<localization::AnomalyOutput>& outputs) {
  if (samples.size() != outputs.size()) throw UsageError("evaluate: one output per sample required");
  if (samples.empty()) throw InputError("evaluate: no test images");
  Report r;
  std::vector<double> image_scores, max_scores, pixel_scores;
  std::vector<int> image_labels, pixel_labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& o = outputs[i];
    if (o.aggregated_map.shape() != s.mask.shape()) throw UsageError("evaluate: map extents differ from mask");
    image_scores.push_back(o.image_score);
    max_scores.push_back(hsf::max_score_baseline(o.aggregated_map));
    image_labels.push_back(s.label);
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      pixel_scores.push_back(o.aggregated_map[p]);
      pixel_labels.push_back(s.mask[p] == 1.0 ? 1 : 0);
    }
  }
  r.num_images = samples.size();
  r.num_abnormal = static_cast<std::size_t>(std::count(image_labels.begin(), image_labels.end(), 1));
  r.num_pixels = pixel_scores.size();
  auto level = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const MetricError& e) {
      throw MetricError(std::string(name) + " level: " + e.what());
    }
  };
  level("image", [&] {
    r.image_auroc = auroc(image_scores, image_labels);
    r.image_max_f1 = max_f1(image_scores, image_labels).f1;
    r.image_auroc_max_baseline = auroc(max_scores, image_labels);
    r.image_max_f1_max_baseline = max_f1(max_scores, image_labels).f1;
    return 0;
  });
  level("pixel", [&] {
    r.pixel_auroc = auroc(pixel_scores, pixel_labels);
    r.pixel_max_f1 = max_f1(pixel_scores, pixel_labels).f1;
    return 0;
  });
  return r;
}

Report evaluate(const std::vector<data::Sample>& samples, const Scorer& scorer) {
  std::vector<localization::AnomalyOutput> outputs;
  outputs.reserve(samples.size());
  for (const auto& s : samples) outputs.push_back(scorer(s));
  return evaluate_outputs(samples, outputs);
}

Report evaluate(AdaClipModel& model, const data::DatasetManifest& manifest, std::uint64_t seed,
                const EvalOptions& options) {
  const auto samples = data::load_samples(manifest);
  std::map<std::string, CaptionPair> captions;
  std::size_t index = 0;
  const Report r = evaluate(samples, [&](const data::Sample& s) {
    auto it = captions.find(s.category);
    if (it == captions.end()) {
      const auto [normal, abnormal] = data::make_captions(s.category, manifest);
      it = captions.emplace(s.category, model.tokenize_captions(normal, abnormal)).first;
    }
    ForwardOptions fo;
    fo.map_noise_sigma = options.map_noise_sigma;
    fo.noise_seed = mix_seed(seed, 5000 + index++);
    return model.infer(s.image, it->second, fo);
  });
  return r;
}

}  // namespace adaclip::eval
