#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advr/features.hpp"
#include "advr/ndarray.hpp"

namespace advr {

enum class FilterKind { median, mean, gaussian };

std::string to_string(FilterKind kind);
FilterKind parse_filter_kind(const std::string& text);

struct FilterSpec {
  FilterKind kind = FilterKind::median;
  std::size_t window = 3;  // odd
  double sigma = 1.0;      // gaussian only

  void validate() const;
};

/// window x window weights exp(-(dy^2 + dx^2) / (2 sigma^2)), normalized
/// to sum to one. Row-major.
std::vector<double> gaussian_kernel(std::size_t window, double sigma);

/// Replaces each element of every [H,W] plane of a [C,H,W] array with the
/// median, mean or gaussian-weighted mean of its window x window
/// neighbourhood. Borders mirror without repeating the edge sample
/// (... c b | a b c ...).
NdArray apply_filter(const FilterSpec& spec, const NdArray& planes);
Spectrogram apply_filter(const FilterSpec& spec, const Spectrogram& s);

}  // namespace advr
