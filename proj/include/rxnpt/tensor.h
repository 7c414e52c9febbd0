#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rxnpt {

#ifdef RXNPT_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Dense row-major array. Most of the library works with rank-1 and rank-2
// tensors; rank-3 shows up only for attention weights.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0));
  Tensor(std::vector<std::size_t> shape, std::vector<Real> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = Real(0)) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, Real fill = Real(0)) { return Tensor({n}, fill); }

  const std::vector<std::size_t> &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty() && shape_.empty(); }

  // Rank-2 view; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  Real *data() { return values_.data(); }
  const Real *data() const { return values_.data(); }
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }

  Real &operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }
  Real &at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }

  void fill(Real v);
  bool all_finite() const;
  bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }
  Tensor reshaped(std::vector<std::size_t> shape) const;

  friend bool operator==(const Tensor &, const Tensor &) = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<Real> values_;
};

std::string shape_string(const std::vector<std::size_t> &shape);

// Sinusoidal table of shape (length, width): even columns sin, odd columns cos.
Tensor positional_encoding(std::size_t length, std::size_t width);

}  // namespace rxnpt
