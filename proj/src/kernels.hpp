#pragma once

// Raw loops behind the graph primitives. Layouts are row-major:
// feature maps [C,H,W], conv weights [Cout,Cin,K,K], dense weights [Out,In].

#include <cstddef>

namespace advr::kernels {

void conv2d_forward(const double* in, std::size_t in_ch, std::size_t h, std::size_t w,
                    const double* weight, const double* bias, std::size_t out_ch,
                    std::size_t k, double* out);

// Accumulates into grad_in / grad_weight / grad_bias; any of them may be null.
void conv2d_backward(const double* in, std::size_t in_ch, std::size_t h, std::size_t w,
                     const double* weight, std::size_t out_ch, std::size_t k,
                     const double* grad_out, double* grad_in, double* grad_weight,
                     double* grad_bias);

void maxpool2x2_forward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                        double* out);
void maxpool2x2_backward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                         const double* grad_out, double* grad_in);

void adaptive_avgpool_forward(const double* in, std::size_t ch, std::size_t h, std::size_t w,
                              std::size_t oh, std::size_t ow, double* out);
void adaptive_avgpool_backward(std::size_t ch, std::size_t h, std::size_t w, std::size_t oh,
                               std::size_t ow, const double* grad_out, double* grad_in);

void dense_forward(const double* in, std::size_t in_n, const double* weight,
                   const double* bias, std::size_t out_n, double* out);
void dense_backward(const double* in, std::size_t in_n, const double* weight,
                    std::size_t out_n, const double* grad_out, double* grad_in,
                    double* grad_weight, double* grad_bias);

}  // namespace advr::kernels
