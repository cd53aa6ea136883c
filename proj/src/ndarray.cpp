#include "advr/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "advr/error.hpp"

namespace advr {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("array shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("array shape " + to_string(shape) + " has a zero dimension");
  }
}

}  // namespace

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  values_.assign(element_count(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_dims(shape_);
  if (values_.size() != element_count(shape_)) {
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

NdArray NdArray::reshaped(Shape shape) const { return NdArray(std::move(shape), values_); }

void NdArray::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool NdArray::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double NdArray::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool operator==(const NdArray& a, const NdArray& b) {
  return a.shape_ == b.shape_ &&
         (a.values_.empty() ||
          std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0);
}

}  // namespace advr
