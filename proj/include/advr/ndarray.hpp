#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advr {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every array carries its shape; the element count always equals the
/// product of the dimensions, and no dimension is zero.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Copy with a different shape of the same element count.
  NdArray reshaped(Shape shape) const;

  void fill(double value);
  bool all_finite() const noexcept;
  double max_abs() const noexcept;

  /// Element-wise equality of shape and bit pattern.
  friend bool operator==(const NdArray& a, const NdArray& b);

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace advr
