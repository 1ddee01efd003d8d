#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adaclip/tensor.hpp"

namespace adaclip::data {

enum class ShapeFamily { kSquares, kDisks, kBars };

ShapeFamily parse_family(std::string_view name);
std::string family_name(ShapeFamily family);

struct Record {
  std::string image_path;  // relative to the manifest directory
  std::string mask_path;
  std::string category;
  int label = 0;
};

inline constexpr std::string_view kClassPlaceholder = "[CLS]";

struct DatasetManifest {
  std::vector<Record> records;
  std::string caption_normal_template = "a photo of normal [CLS]";
  std::string caption_abnormal_template = "a photo of damaged [CLS]";
  // Directory the record paths are relative to. Not serialized.
  std::filesystem::path root;

  static DatasetManifest load(const std::filesystem::path& path);
  std::string to_json() const;
  void save(const std::filesystem::path& path) const;
  std::set<std::string> categories() const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

// Binary P5 with maxval 255. Values are clamped to [0, 1] and stored as
// round(255 v).
std::string encode_pgm(const Tensor& image);
Tensor decode_pgm(std::string_view bytes, const std::string& source = "<memory>");
Tensor load_pgm(const std::filesystem::path& path);
void save_pgm(const Tensor& image, const std::filesystem::path& path);

struct SynthOptions {
  ShapeFamily family = ShapeFamily::kSquares;
  std::size_t n_normal = 4;
  std::size_t n_abnormal = 4;
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
};

inline constexpr double kPixelNoise = 0.05;
inline constexpr std::size_t kDefectMinPx = 3;
inline constexpr std::size_t kDefectMaxPx = 8;

// Renders the family on a gray background with seeded jitter and Gaussian
// pixel noise. Abnormal images get an elliptical blob 3-8 px across whose
// color contrasts with the pixels beneath it; the mask is the exact blob
// footprint. Writes images/, masks/ and manifest.json under out_dir.
DatasetManifest gen_synthetic(const SynthOptions& options, const std::filesystem::path& out_dir);

// Template texts with [CLS] replaced by the category.
std::pair<std::string, std::string> make_captions(const std::string& category, const DatasetManifest& manifest);

// Throws InputError naming the shared categories if train and test overlap.
void assert_zero_shot(const DatasetManifest& train, const DatasetManifest& test);

struct Sample {
  Tensor image;  // H x W in [0, 1]
  Tensor mask;   // H x W in {0, 1}
  int label = 0;
  std::string category;
};

// Loads every record, checking mask binarity and label consistency.
std::vector<Sample> load_samples(const DatasetManifest& manifest);

}  // namespace adaclip::data
