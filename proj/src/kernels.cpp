#include "dgreid/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dgreid::kernels {

namespace {

void check_conv_args(const Tensor& input, const Tensor& weight) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw std::invalid_argument("conv2d: expected NCHW input and OIKK weight, got " +
                                input.shape_string() + " and " +
                                weight.shape_string());
  }
  if (input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d: input has " +
                                std::to_string(input.dim(1)) +
                                " channels, weight expects " +
                                std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw std::invalid_argument("conv2d: only square kernels are supported");
  }
}

// cols is (patch_size, out_h * out_w).
void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* channel = image + c * g.in_height * g.in_width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* dst = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * g.stride + ky) - pad;
          double* out_row = dst + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_height)) {
            for (std::size_t x = 0; x < ow; ++x) out_row[x] = 0.0;
            continue;
          }
          const double* in_row = channel + iy * g.in_width;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * g.stride + kx) - pad;
            out_row[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_width))
                             ? 0.0
                             : in_row[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* image) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* channel = image + c * g.in_height * g.in_width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* src = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_height)) continue;
          double* in_row = channel + iy * g.in_width;
          const double* col_row = src + y * ow;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_width)) {
              in_row[ix] += col_row[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           std::size_t stride, std::size_t padding) {
  check_conv_args(input, weight);
  ConvGeometry g;
  g.in_channels = input.dim(1);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.padding = padding;
  g.in_height = input.dim(2);
  g.in_width = input.dim(3);
  if (g.in_height + 2 * padding < g.kernel || g.in_width + 2 * padding < g.kernel) {
    throw std::invalid_argument("conv2d: input " + input.shape_string() +
                                " smaller than kernel");
  }
  return g;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const std::size_t batch = input.dim(0);
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t patch = g.patch_size();
  const std::size_t in_plane = g.in_channels * g.in_height * g.in_width;
  Tensor output({batch, g.out_channels, oh, ow});

  const double* w = weight.data();
#pragma omp parallel
  {
    std::vector<double> cols(patch * plane);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(input.data() + n * in_plane, g, cols.data());
      double* out = output.data() + n * g.out_channels * plane;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double* dst = out + co * plane;
        const double b = bias.empty() ? 0.0 : bias[co];
        for (std::size_t p = 0; p < plane; ++p) dst[p] = b;
        const double* wrow = w + co * patch;
        for (std::size_t k = 0; k < patch; ++k) {
          const double wk = wrow[k];
          const double* src = cols.data() + k * plane;
#pragma omp simd
          for (std::size_t p = 0; p < plane; ++p) dst[p] += wk * src[p];
        }
      }
    }
  }
  return output;
}

Tensor conv2d_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, std::size_t stride,
                       std::size_t padding, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const std::size_t batch = input.dim(0);
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t patch = g.patch_size();
  const std::size_t in_plane = g.in_channels * g.in_height * g.in_width;
  const std::size_t wsize = g.out_channels * patch;
  if (grad_output.shape() !=
      std::vector<std::size_t>{batch, g.out_channels, oh, ow}) {
    throw std::invalid_argument("conv2d_backward: grad shape " +
                                grad_output.shape_string());
  }

  Tensor grad_input;
  if (need_input_grad) grad_input = Tensor(input.shape());
  // Per-sample weight gradients, reduced in sample order below so the
  // result does not depend on the thread count.
  std::vector<double> per_sample(grad_weight ? batch * wsize : 0);

  const double* w = weight.data();
#pragma omp parallel
  {
    std::vector<double> cols(patch * plane);
    std::vector<double> dcols(need_input_grad ? patch * plane : 0);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
      const double* dy = grad_output.data() + n * g.out_channels * plane;
      if (grad_weight) {
        im2col(input.data() + n * in_plane, g, cols.data());
        double* dw = per_sample.data() + n * wsize;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          const double* dyc = dy + co * plane;
          for (std::size_t k = 0; k < patch; ++k) {
            const double* src = cols.data() + k * plane;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t p = 0; p < plane; ++p) acc += dyc[p] * src[p];
            dw[co * patch + k] = acc;
          }
        }
      }
      if (need_input_grad) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          const double* dyc = dy + co * plane;
          const double* wrow = w + co * patch;
          for (std::size_t k = 0; k < patch; ++k) {
            const double wk = wrow[k];
            double* dst = dcols.data() + k * plane;
#pragma omp simd
            for (std::size_t p = 0; p < plane; ++p) dst[p] += wk * dyc[p];
          }
        }
        col2im(dcols.data(), g, grad_input.data() + n * in_plane);
      }
    }
  }

  if (grad_weight) {
    double* dw = grad_weight->data();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < wsize; ++i) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) acc += per_sample[n * wsize + i];
      dw[i] += acc;
    }
  }
  if (grad_bias) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* dyc = grad_output.data() + (n * g.out_channels + co) * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += dyc[p];
      }
      (*grad_bias)[co] += acc;
    }
  }
  return grad_input;
}

namespace {
void check_linear_args(const Tensor& input, const Tensor& weight) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw std::invalid_argument("linear: expected rank-2 input and weight, got " +
                                input.shape_string() + " and " +
                                weight.shape_string());
  }
  if (input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("linear: input dimension " +
                                std::to_string(input.dim(1)) +
                                " does not match weight " + weight.shape_string());
  }
}
}  // namespace

Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias) {
  check_linear_args(input, weight);
  const std::size_t rows = input.dim(0), in = input.dim(1), out = weight.dim(0);
  Tensor output({rows, out});
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = input.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = weight.data() + o * in;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < in; ++i) acc += x[i] * wrow[i];
      output.at(r, o) = acc + (bias.empty() ? 0.0 : bias[o]);
    }
  }
  return output;
}

Tensor linear_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad) {
  check_linear_args(input, weight);
  const std::size_t rows = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (grad_output.shape() != std::vector<std::size_t>{rows, out}) {
    throw std::invalid_argument("linear_backward: grad shape " +
                                grad_output.shape_string());
  }
  if (grad_weight || grad_bias) {
#pragma omp parallel for schedule(static)
    for (std::size_t o = 0; o < out; ++o) {
      double bacc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double dy = grad_output.at(r, o);
        bacc += dy;
        if (grad_weight) {
          double* dw = grad_weight->data() + o * in;
          const double* x = input.data() + r * in;
#pragma omp simd
          for (std::size_t i = 0; i < in; ++i) dw[i] += dy * x[i];
        }
      }
      if (grad_bias) (*grad_bias)[o] += bacc;
    }
  }
  Tensor grad_input;
  if (need_input_grad) {
    grad_input = Tensor({rows, in});
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < rows; ++r) {
      double* dx = grad_input.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double dy = grad_output.at(r, o);
        const double* wrow = weight.data() + o * in;
#pragma omp simd
        for (std::size_t i = 0; i < in; ++i) dx[i] += dy * wrow[i];
      }
    }
  }
  return grad_input;
}

Tensor pairwise_distances(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("pairwise_distances: incompatible shapes " +
                                a.shape_string() + " and " + b.shape_string());
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor out({n, m});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* y = b.data() + j * d;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - y[k];
        acc += diff * diff;
      }
      out.at(i, j) = std::sqrt(acc);
    }
  }
  return out;
}

}  // namespace dgreid::kernels
