#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "adaclip/model.hpp"
#include "adaclip/training.hpp"

namespace adaclip {

// Everything a command needs to rebuild a model and rerun training.
struct AppConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  training::TrainConfig train;
  // One word per line; empty selects the built-in vocabulary.
  std::string vocab_file;

  void validate() const;
  // Canonical key=value text, one key per line in a fixed order.
  std::string dump() const;
  // SHA-256 of dump(), hex.
  std::string digest() const;
  // Applies --seed: the base seed and the seeds derived from it.
  void set_seed(std::uint64_t s);
};

// Starts from the defaults and applies every `key = value` line. Blank lines
// and '#' comments are ignored; unknown keys and bad values are ConfigErrors
// naming the line.
AppConfig parse_config(const std::string& text, const std::string& source = "<config>");
AppConfig load_config(const std::filesystem::path& path);

}  // namespace adaclip
