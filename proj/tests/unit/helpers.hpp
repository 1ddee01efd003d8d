#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <memory>
#include <vector>

#include "adaclip/autograd.hpp"
#include "adaclip/model.hpp"
#include "adaclip/numerics.hpp"
#include "adaclip/random.hpp"
#include "adaclip/tensor.hpp"

namespace testing {

using adaclip::Parameter;
using adaclip::Shape;
using adaclip::Tensor;
using adaclip::ag::Var;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  adaclip::Rng rng(seed);
  return rng.normal_tensor(std::move(shape), stddev);
}

inline Tensor uniform_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  adaclip::Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Max relative finite-difference error of f w.r.t. every input, through the
// scalar sum(f(x) * R) with a fixed random R.
inline double op_gradcheck(std::vector<Parameter>& inputs, const std::function<Var(const std::vector<Var>&)>& f,
                           std::uint64_t seed = 1) {
  auto build = [&] {
    std::vector<Var> vars;
    for (auto& p : inputs) vars.push_back(Var::parameter(p));
    return f(vars);
  };
  const Tensor weights = random_tensor(build().value().shape(), seed);
  auto loss = [&] { return adaclip::ag::sum(adaclip::ag::mul(build(), Var::constant(weights))); };
  double worst = 0.0;
  for (auto& p : inputs) worst = std::max(worst, adaclip::finite_diff_check(loss, p).max_rel_error);
  return worst;
}

inline Parameter param(const char* name, Tensor value) { return Parameter(name, std::move(value), true); }

// Small enough for quick forward passes: 32 px, 16 patches, width 16.
inline adaclip::ModelConfig tiny_model_config() {
  adaclip::ModelConfig c;
  c.encoder.image_size = 32;
  c.encoder.embed_dim_v = c.encoder.embed_dim_t = c.encoder.shared_dim = 16;
  c.encoder.num_layers = 3;
  c.encoder.hierarchy_layers = {1, 2, 3};
  c.prompts.depth = 2;
  c.prompts.length = 3;
  c.hsf.k = 4;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("adaclip_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Square mask with a positive block in the top-left quadrant.
inline Tensor block_mask(std::size_t side) {
  Tensor m(Shape{side, side});
  for (std::size_t r = side / 8; r < side / 2; ++r)
    for (std::size_t c = side / 8; c < side / 2; ++c) m.at(r, c) = 1.0;
  return m;
}

}  // namespace testing
