#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adaclip/config.hpp"
#include "adaclip/model.hpp"
#include "adaclip/tensor.hpp"

namespace adaclip {

inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'C', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little-endian throughout:
//   "ADCL" | u32 version | 32-byte SHA-256 of the config text
//   | str config text | u32 n, n x str vocabulary word
//   | u32 n, n x (str name | u8 dtype (1 = f64) | u32 rank | rank x u64 | payload)
// where str is a u64 byte length followed by the bytes.
struct CheckpointData {
  std::string config_text;
  std::vector<std::string> vocabulary;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

inline constexpr std::string_view kVelocityPrefix = "velocity/";

// Every model parameter plus the optimizer velocities under "velocity/<name>".
CheckpointData make_checkpoint(const AppConfig& config, const AdaClipModel& model,
                               const std::map<std::string, Tensor>& velocities);
void save_checkpoint(const std::filesystem::path& path, const AppConfig& config, const AdaClipModel& model,
                     const std::map<std::string, Tensor>& velocities);

struct LoadedCheckpoint {
  AppConfig config;
  std::unique_ptr<AdaClipModel> model;
  std::map<std::string, Tensor> velocities;
};

// Rebuilds the model from the stored config and vocabulary and overwrites
// every parameter. Missing, extra or misshapen tensors are FormatErrors.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint restore_checkpoint(const CheckpointData& data, const std::string& source);

}  // namespace adaclip
