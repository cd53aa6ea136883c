#include "kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace advr::kernels {

namespace {

struct Span1 {
  std::size_t lo;
  std::size_t hi;
};

// Output rows/cols y for which y + offset lands inside [0, n).
Span1 valid_range(std::ptrdiff_t offset, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - offset);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

std::size_t pool_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t pool_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

void conv2d_forward(const double* in, std::size_t in_ch, std::size_t h, std::size_t w,
                    const double* weight, const double* bias, std::size_t out_ch,
                    std::size_t k, double* out) {
  const std::size_t plane = h * w;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t kk = k * k;

  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    std::fill(out + oc * plane, out + (oc + 1) * plane, bias ? bias[oc] : 0.0);
  }

  // Four output channels per pass share each input row load.
  std::size_t oc = 0;
  for (; oc + 4 <= out_ch; oc += 4) {
    double* o0 = out + oc * plane;
    double* o1 = o0 + plane;
    double* o2 = o1 + plane;
    double* o3 = o2 + plane;
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const double* ip = in + ic * plane;
      const double* k0 = weight + (oc * in_ch + ic) * kk;
      const double* k1 = k0 + in_ch * kk;
      const double* k2 = k1 + in_ch * kk;
      const double* k3 = k2 + in_ch * kk;
      for (std::size_t kh = 0; kh < k; ++kh) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(kh) - pad;
        const Span1 ys = valid_range(dy, h);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kw) - pad;
          const Span1 xs = valid_range(dx, w);
          const std::size_t t = kh * k + kw;
          const double w0 = k0[t], w1 = k1[t], w2 = k2[t], w3 = k3[t];
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* src = ip + (y + dy) * w + dx;
            double* d0 = o0 + y * w;
            double* d1 = o1 + y * w;
            double* d2 = o2 + y * w;
            double* d3 = o3 + y * w;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) {
              const double v = src[x];
              d0[x] += w0 * v;
              d1[x] += w1 * v;
              d2[x] += w2 * v;
              d3[x] += w3 * v;
            }
          }
        }
      }
    }
  }
  for (; oc < out_ch; ++oc) {
    double* o0 = out + oc * plane;
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const double* ip = in + ic * plane;
      const double* k0 = weight + (oc * in_ch + ic) * kk;
      for (std::size_t kh = 0; kh < k; ++kh) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(kh) - pad;
        const Span1 ys = valid_range(dy, h);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kw) - pad;
          const Span1 xs = valid_range(dx, w);
          const double w0 = k0[kh * k + kw];
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* src = ip + (y + dy) * w + dx;
            double* d0 = o0 + y * w;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) d0[x] += w0 * src[x];
          }
        }
      }
    }
  }
}

void conv2d_backward(const double* in, std::size_t in_ch, std::size_t h, std::size_t w,
                     const double* weight, std::size_t out_ch, std::size_t k,
                     const double* grad_out, double* grad_in, double* grad_weight,
                     double* grad_bias) {
  const std::size_t plane = h * w;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t kk = k * k;

  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    const double* g = grad_out + oc * plane;
    if (grad_bias) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += g[i];
      grad_bias[oc] += s;
    }
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const double* ip = in + ic * plane;
      const double* kp = weight + (oc * in_ch + ic) * kk;
      double* gi = grad_in ? grad_in + ic * plane : nullptr;
      double* gw = grad_weight ? grad_weight + (oc * in_ch + ic) * kk : nullptr;
      for (std::size_t kh = 0; kh < k; ++kh) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(kh) - pad;
        const Span1 ys = valid_range(dy, h);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kw) - pad;
          const Span1 xs = valid_range(dx, w);
          const std::size_t t = kh * k + kw;
          const double kv = kp[t];
          double acc = 0.0;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* go = g + y * w;
            const std::size_t row = (y + dy) * w + dx;
            if (gw) {
              const double* src = ip + row;
              for (std::size_t x = xs.lo; x < xs.hi; ++x) acc += go[x] * src[x];
            }
            if (gi) {
              double* dst = gi + row;
              for (std::size_t x = xs.lo; x < xs.hi; ++x) dst[x] += kv * go[x];
            }
          }
          if (gw) gw[t] += acc;
        }
      }
    }
  }
}

void maxpool2x2_forward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                        double* out) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t c = 0; c < ch; ++c) {
    const double* ip = in + c * h * w;
    double* op = out + c * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const double* r0 = ip + (2 * i) * w;
      const double* r1 = r0 + w;
      for (std::size_t j = 0; j < ow; ++j) {
        double m = r0[2 * j];
        if (r0[2 * j + 1] > m) m = r0[2 * j + 1];
        if (r1[2 * j] > m) m = r1[2 * j];
        if (r1[2 * j + 1] > m) m = r1[2 * j + 1];
        op[i * ow + j] = m;
      }
    }
  }
}

void maxpool2x2_backward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                         const double* grad_out, double* grad_in) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t c = 0; c < ch; ++c) {
    const double* ip = in + c * h * w;
    double* gp = grad_in + c * h * w;
    const double* go = grad_out + c * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t cand[4] = {(2 * i) * w + 2 * j, (2 * i) * w + 2 * j + 1,
                                     (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (ip[cand[q]] > ip[best]) best = cand[q];
        }
        gp[best] += go[i * ow + j];
      }
    }
  }
}

void adaptive_avgpool_forward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                              std::size_t oh, std::size_t ow, double* out) {
  for (std::size_t c = 0; c < ch; ++c) {
    const double* ip = in + c * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t y0 = pool_start(i, h, oh), y1 = pool_end(i, h, oh);
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t x0 = pool_start(j, w, ow), x1 = pool_end(j, w, ow);
        double s = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = x0; x < x1; ++x) s += ip[y * w + x];
        }
        out[(c * oh + i) * ow + j] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
}

void adaptive_avgpool_backward(std::size_t ch, std::size_t h, std::size_t w, std::size_t oh,
                               std::size_t ow, const double* grad_out, double* grad_in) {
  for (std::size_t c = 0; c < ch; ++c) {
    double* gp = grad_in + c * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t y0 = pool_start(i, h, oh), y1 = pool_end(i, h, oh);
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t x0 = pool_start(j, w, ow), x1 = pool_end(j, w, ow);
        const double g =
            grad_out[(c * oh + i) * ow + j] / static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = x0; x < x1; ++x) gp[y * w + x] += g;
        }
      }
    }
  }
}

void dense_forward(const double* in, std::size_t in_n, const double* weight,
                   const double* bias, std::size_t out_n, double* out) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const double* row = weight + o * in_n;
    double s = bias ? bias[o] : 0.0;
    for (std::size_t i = 0; i < in_n; ++i) s += row[i] * in[i];
    out[o] = s;
  }
}

void dense_backward(const double* in, std::size_t in_n, const double* weight,
                    std::size_t out_n, const double* grad_out, double* grad_in,
                    double* grad_weight, double* grad_bias) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const double g = grad_out[o];
    if (grad_bias) grad_bias[o] += g;
    if (g == 0.0) continue;
    const double* row = weight + o * in_n;
    if (grad_weight) {
      double* gw = grad_weight + o * in_n;
      for (std::size_t i = 0; i < in_n; ++i) gw[i] += g * in[i];
    }
    if (grad_in) {
      for (std::size_t i = 0; i < in_n; ++i) grad_in[i] += g * row[i];
    }
  }
}

}  // namespace advr::kernels
