#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "adaclip/config.hpp"

namespace adaclip::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Parses `args` (without the program name) and runs the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GradcheckResult {
  double max_rel_error = 0.0;
  // Same coordinates scored with the 1e-8 floor.
  double max_rel_error_tight = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t coords_checked = 0;
  std::size_t tensors_checked = 0;
};

inline constexpr double kGradcheckTolerance = 1e-4;
// Relative errors use max(floor, |numeric|) as denominator.
inline constexpr double kGradcheckFloor = 1e-6;

// Config used by `gradcheck`: the defaults with the given image size.
AppConfig gradcheck_config(std::size_t size, std::uint64_t seed);

// Finite-difference check of total_loss w.r.t. every trainable tensor on one
// seeded random image/mask pair, sampling `coords_per_tensor` entries each.
GradcheckResult gradcheck(const AppConfig& config, std::size_t coords_per_tensor = 16);

}  // namespace adaclip::cli
