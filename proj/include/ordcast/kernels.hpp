#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version (the default
// namespace) and a plain serial twin in `serial` used by tests and the
// benchmark. The parallel versions partition work so that every output
// element is produced by exactly one thread in a fixed summation order, so
// results do not depend on the thread count. They are bitwise identical to
// the serial twins except for the conv2d_backward input gradient, whose
// scatter-form twin sums in a different order (equal up to rounding).

#include <cstddef>
#include <cstdint>

#include "ordcast/tensor.hpp"

namespace ordcast::kernels {

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Stride-1 convolution with zero "same" padding.
// in: Cin x H x W, weight: Cout x Cin x k x k (k odd), bias: Cout.
void conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Tensor& out);
// Accumulates into grad_weight / grad_bias; overwrites grad_in when given.
void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_in, Tensor& grad_weight, Tensor& grad_bias);

// Mean over a window x window box centred on each pixel of an H x W field,
// divided by the number of cells inside the domain.
Tensor box_mean(const Tensor& field, std::size_t window);

// Event = value >= threshold. Pixels with valid == 0 are skipped; an empty
// valid tensor means all valid.
Counts confusion(const double* pred, const double* obs, const double* valid, std::size_t n,
                 double threshold);

// out(y, x) = bilinear sample of src at (y - dy, x - dx). Samples that touch
// a missing pixel or fall outside the grid become `missing`.
void shift_bilinear(const double* src, double* out, std::size_t h, std::size_t w, double dy,
                    double dx, double missing);

namespace serial {
void conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Tensor& out);
void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_in, Tensor& grad_weight, Tensor& grad_bias);
Tensor box_mean(const Tensor& field, std::size_t window);
Counts confusion(const double* pred, const double* obs, const double* valid, std::size_t n,
                 double threshold);
void shift_bilinear(const double* src, double* out, std::size_t h, std::size_t w, double dy,
                    double dx, double missing);
}  // namespace serial

}  // namespace ordcast::kernels
