#pragma once

// Compute kernels used by the layers. The default namespace holds the
// OpenMP-parallel versions (im2col + GEMM for convolutions); `reference`
// holds direct-loop serial implementations kept for testing and the
// benchmark. Both produce results that are independent of thread count.

#include <cstddef>

#include "dgreid/tensor.hpp"

namespace dgreid::kernels {

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t in_height = 0;
  std::size_t in_width = 0;

  std::size_t out_height() const {
    return (in_height + 2 * padding - kernel) / stride + 1;
  }
  std::size_t out_width() const {
    return (in_width + 2 * padding - kernel) / stride + 1;
  }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
};

// Derives geometry from an NCHW input and an (out, in, k, k) weight tensor.
ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           std::size_t stride, std::size_t padding);

// y = conv(x, w) + b. `bias` may be empty.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride,
                      std::size_t padding);

// Accumulates into grad_weight / grad_bias (when non-null) and returns the
// input gradient when `need_input_grad`, otherwise an empty tensor.
Tensor conv2d_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, std::size_t stride,
                       std::size_t padding, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad);

// y = x W^T + b for x (rows, in), W (out, in).
Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias);

Tensor linear_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad);

// Euclidean (non-squared) distances between rows of a and rows of b.
Tensor pairwise_distances(const Tensor& a, const Tensor& b);

namespace reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride,
                      std::size_t padding);

Tensor conv2d_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, std::size_t stride,
                       std::size_t padding, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad);

Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias);

Tensor linear_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad);

Tensor pairwise_distances(const Tensor& a, const Tensor& b);

}  // namespace reference

}  // namespace dgreid::kernels
