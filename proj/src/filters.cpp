#include "advr/filters.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "advr/error.hpp"

namespace advr {

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::median: return "median";
    case FilterKind::mean: return "mean";
    case FilterKind::gaussian: return "gaussian";
  }
  return "?";
}

FilterKind parse_filter_kind(const std::string& text) {
  if (text == "median") return FilterKind::median;
  if (text == "mean") return FilterKind::mean;
  if (text == "gaussian") return FilterKind::gaussian;
  throw InvalidArgument("unknown filter kind '" + text + "'");
}

void FilterSpec::validate() const {
  if (window == 0 || window % 2 == 0) {
    throw InvalidArgument(fmt::format("filter window must be odd and >= 1, got {}", window));
  }
  if (kind == FilterKind::gaussian && !(sigma > 0.0 && std::isfinite(sigma))) {
    throw InvalidArgument(fmt::format("gaussian sigma must be positive, got {}", sigma));
  }
}

std::vector<double> gaussian_kernel(std::size_t window, double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> k;
  k.reserve(window * window);
  double total = 0.0;
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
      const double w = std::exp(-static_cast<double>(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      k.push_back(w);
      total += w;
    }
  }
  for (double& w : k) w /= total;
  return k;
}

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= sn) i = 2 * (sn - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

NdArray apply_filter(const FilterSpec& spec, const NdArray& planes) {
  spec.validate();
  const Shape& s = planes.shape();
  if (s.size() != 3) throw ShapeError("apply_filter needs [C,H,W], got " + to_string(s));
  const std::size_t ch = s[0], h = s[1], w = s[2];
  if (spec.window > h || spec.window > w) {
    throw InvalidArgument(fmt::format("filter window {} exceeds the {}x{} plane", spec.window, h, w));
  }
  if (spec.window == 1) return planes;

  const std::size_t win = spec.window;
  const auto r = static_cast<std::ptrdiff_t>(win / 2);
  const std::size_t pw = w + 2 * win / 2;
  const std::vector<double> kernel =
      spec.kind == FilterKind::gaussian ? gaussian_kernel(win, spec.sigma) : std::vector<double>{};
  const double count = static_cast<double>(win * win);

  NdArray out(s);
  std::vector<double> padded((h + 2 * win / 2) * pw);
  std::vector<double> patch(win * win);
  for (std::size_t c = 0; c < ch; ++c) {
    const double* src = planes.data() + c * h * w;
    for (std::size_t y = 0; y < h + 2 * win / 2; ++y) {
      const std::size_t sy = mirror(static_cast<std::ptrdiff_t>(y) - r, h);
      for (std::size_t x = 0; x < pw; ++x) {
        padded[y * pw + x] = src[sy * w + mirror(static_cast<std::ptrdiff_t>(x) - r, w)];
      }
    }
    double* dst = out.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t n = 0;
        for (std::size_t dy = 0; dy < win; ++dy) {
          const double* row = padded.data() + (y + dy) * pw + x;
          for (std::size_t dx = 0; dx < win; ++dx) patch[n++] = row[dx];
        }
        double v = 0.0;
        switch (spec.kind) {
          case FilterKind::median: {
            auto mid = patch.begin() + static_cast<std::ptrdiff_t>(patch.size() / 2);
            std::nth_element(patch.begin(), mid, patch.end());
            v = *mid;
            break;
          }
          case FilterKind::mean:
            for (double p : patch) v += p;
            v /= count;
            break;
          case FilterKind::gaussian:
            for (std::size_t i = 0; i < patch.size(); ++i) v += kernel[i] * patch[i];
            break;
        }
        dst[y * w + x] = v;
      }
    }
  }
  return out;
}

Spectrogram apply_filter(const FilterSpec& spec, const Spectrogram& s) {
  return Spectrogram(apply_filter(spec, s.array()));
}

}  // namespace advr
