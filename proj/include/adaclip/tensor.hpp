#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace adaclip {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. An empty shape is a scalar holding one
// value.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  Tensor row(std::size_t r) const;
  bool all_finite() const;
  // Throws DomainError naming `where` if any entry is NaN or infinite.
  void require_finite(const char* where) const;
  void fill(double value);

  double min() const;
  double max() const;
  double sum() const;

  // Bitwise comparison of shape and payload.
  bool operator==(const Tensor& other) const;
  bool operator!=(const Tensor& other) const { return !(*this == other); }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// A named tensor with an accumulated gradient. Frozen parameters
// (trainable=false) never receive gradients and are never stepped.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;
  bool trainable = false;
  // Set when backward() has accumulated into `gradient` since the last reset.
  bool has_gradient = false;

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable);

  void zero_grad();
};

}  // namespace adaclip
