#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace t2ipal {

/// Dense row-major array of doubles. Most of the engine works on rank-2
/// tensors; vectors are stored as 1×n rows or n×1 columns.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row_vector(std::span<const double> values);
  static Tensor column_vector(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  // Rank-2 accessors; throw InvalidArgument on other ranks.
  std::size_t rows() const {
    if (shape_.size() != 2) throw_not_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    if (shape_.size() != 2) throw_not_matrix();
    return shape_[1];
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  [[noreturn]] void throw_not_matrix() const;

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Throws InvalidArgument unless `t` is rank 2 with the given extents.
void require_shape(const Tensor& t, std::size_t rows, std::size_t cols, const char* what);

// Rounds every entry through float32; used where tensors are persisted.
Tensor round_to_float(const Tensor& t);

}  // namespace t2ipal
