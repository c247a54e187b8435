#include <cmath>
#include <stdexcept>

#include "dgreid/kernels.hpp"

namespace dgreid::kernels::reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const std::size_t batch = input.dim(0);
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t k = g.kernel;
  Tensor output({batch, g.out_channels, oh, ow});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) -
                                static_cast<long>(padding);
                const long ix = static_cast<long>(x * stride + kx) -
                                static_cast<long>(padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_height) ||
                    ix >= static_cast<long>(g.in_width)) {
                  continue;
                }
                acc += weight[((co * g.in_channels + ci) * k + ky) * k + kx] *
                       input[((n * g.in_channels + ci) * g.in_height + iy) *
                                 g.in_width +
                             ix];
              }
            }
          }
          output[((n * g.out_channels + co) * oh + y) * ow + x] = acc;
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
  const std::size_t k = g.kernel;
  Tensor grad_input;
  if (need_input_grad) grad_input = Tensor(input.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const double dy = grad_output[((n * g.out_channels + co) * oh + y) * ow + x];
          if (grad_bias) (*grad_bias)[co] += dy;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) -
                                static_cast<long>(padding);
                const long ix = static_cast<long>(x * stride + kx) -
                                static_cast<long>(padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_height) ||
                    ix >= static_cast<long>(g.in_width)) {
                  continue;
                }
                const std::size_t widx = ((co * g.in_channels + ci) * k + ky) * k + kx;
                const std::size_t xidx =
                    ((n * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix;
                if (grad_weight) (*grad_weight)[widx] += dy * input[xidx];
                if (need_input_grad) grad_input[xidx] += dy * weight[widx];
              }
            }
          }
        }
      }
    }
  }
  return grad_input;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("linear: incompatible shapes");
  }
  Tensor out({input.dim(0), weight.dim(0)});
  for (std::size_t r = 0; r < input.dim(0); ++r) {
    for (std::size_t o = 0; o < weight.dim(0); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < input.dim(1); ++i) {
        acc += input.at(r, i) * weight.at(o, i);
      }
      out.at(r, o) = acc + (bias.empty() ? 0.0 : bias[o]);
    }
  }
  return out;
}

Tensor linear_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, Tensor* grad_weight,
                       Tensor* grad_bias, bool need_input_grad) {
  Tensor grad_input;
  if (need_input_grad) grad_input = Tensor(input.shape());
  for (std::size_t r = 0; r < input.dim(0); ++r) {
    for (std::size_t o = 0; o < weight.dim(0); ++o) {
      const double dy = grad_output.at(r, o);
      if (grad_bias) (*grad_bias)[o] += dy;
      for (std::size_t i = 0; i < input.dim(1); ++i) {
        if (grad_weight) grad_weight->at(o, i) += dy * input.at(r, i);
        if (need_input_grad) grad_input.at(r, i) += dy * weight.at(o, i);
      }
    }
  }
  return grad_input;
}

Tensor pairwise_distances(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("pairwise_distances: incompatible shapes");
  }
  Tensor out({a.dim(0), b.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(0); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) {
        const double diff = a.at(i, k) - b.at(j, k);
        acc += diff * diff;
      }
      out.at(i, j) = std::sqrt(acc);
    }
  }
  return out;
}

}  // namespace dgreid::kernels::reference
