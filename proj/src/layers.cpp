#include "dgreid/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "dgreid/kernels.hpp"

namespace dgreid {

namespace {

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& v : t.values()) v = normal(rng, 0.0, stddev);
}

const Cache& require_cache(const Cache& cache, std::size_t saved,
                           const char* layer) {
  if (cache.saved.size() < saved) {
    throw std::logic_error(std::string(layer) +
                           ": backward called without a forward cache");
  }
  return cache;
}

// Channel layout helper for (N, C) and (N, C, H, W) tensors.
struct ChannelView {
  std::size_t batch, channels, spatial;
};

ChannelView channel_view(const Tensor& t, std::size_t expected_channels,
                         const char* layer) {
  if (t.rank() != 2 && t.rank() != 4) {
    throw std::invalid_argument(std::string(layer) + ": expected rank 2 or 4, got " +
                                t.shape_string());
  }
  ChannelView v{t.dim(0), t.dim(1), t.rank() == 4 ? t.dim(2) * t.dim(3) : 1};
  if (v.channels != expected_channels) {
    throw std::invalid_argument(std::string(layer) + ": expected " +
                                std::to_string(expected_channels) +
                                " channels, got " + t.shape_string());
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t padding,
               bool bias)
    : stride_(stride),
      padding_(padding),
      weight_({out_channels, in_channels, kernel, kernel}),
      weight_grad_({out_channels, in_channels, kernel, kernel}) {
  if (bias) {
    bias_ = Tensor({out_channels});
    bias_grad_ = Tensor({out_channels});
  }
}

Tensor Conv2d::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (cache) {
    cache->mode = mode;
    cache->saved = {input};
  }
  return kernels::conv2d_forward(input, weight_, bias_, stride_, padding_);
}

Tensor Conv2d::backward(const Tensor& grad_output, const Cache& cache,
                        bool need_input_grad) {
  require_cache(cache, 1, "conv2d");
  return kernels::conv2d_backward(cache.saved[0], weight_, grad_output, stride_,
                                  padding_, &weight_grad_,
                                  bias_.empty() ? nullptr : &bias_grad_,
                                  need_input_grad);
}

void Conv2d::parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight_, &weight_grad_, true});
  if (!bias_.empty()) out.push_back({prefix + "bias", &bias_, &bias_grad_, false});
}

void Conv2d::initialize(Rng& rng) {
  const double fan_in =
      static_cast<double>(weight_.dim(1) * weight_.dim(2) * weight_.dim(3));
  fill_normal(weight_, rng, std::sqrt(2.0 / fan_in));
  bias_.fill(0.0);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in_features, std::size_t out_features, bool bias)
    : weight_({out_features, in_features}),
      weight_grad_({out_features, in_features}) {
  if (bias) {
    bias_ = Tensor({out_features});
    bias_grad_ = Tensor({out_features});
  }
}

Tensor Linear::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (cache) {
    cache->mode = mode;
    cache->saved = {input};
  }
  return kernels::linear_forward(input, weight_, bias_);
}

Tensor Linear::backward(const Tensor& grad_output, const Cache& cache,
                        bool need_input_grad) {
  require_cache(cache, 1, "linear");
  return kernels::linear_backward(cache.saved[0], weight_, grad_output,
                                  &weight_grad_,
                                  bias_.empty() ? nullptr : &bias_grad_,
                                  need_input_grad);
}

void Linear::parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight_, &weight_grad_, true});
  if (!bias_.empty()) out.push_back({prefix + "bias", &bias_, &bias_grad_, false});
}

void Linear::initialize(Rng& rng) {
  fill_normal(weight_, rng, std::sqrt(1.0 / static_cast<double>(weight_.dim(1))));
  bias_.fill(0.0);
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t channels, double eps)
    : eps_(eps),
      gamma_({channels}, 1.0),
      gamma_grad_({channels}),
      beta_({channels}),
      beta_grad_({channels}),
      running_mean_({channels}),
      running_var_({channels}, 1.0) {}

Tensor BatchNorm::forward(const Tensor& input, Mode mode, Cache* cache) const {
  const ChannelView v = channel_view(input, gamma_.size(), "batchnorm");
  Tensor output(input.shape());
  const std::size_t count = v.batch * v.spatial;

  if (mode == Mode::kInference) {
    Tensor inv_std({v.channels});
    for (std::size_t c = 0; c < v.channels; ++c) {
      inv_std[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
    }
    for (std::size_t n = 0; n < v.batch; ++n) {
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (n * v.channels + c) * v.spatial;
        for (std::size_t s = 0; s < v.spatial; ++s) {
          output[base + s] = gamma_[c] * (input[base + s] - running_mean_[c]) *
                                 inv_std[c] +
                             beta_[c];
        }
      }
    }
    if (cache) {
      cache->mode = mode;
      cache->saved = {input, inv_std};
    }
    return output;
  }

  if (count < 2) {
    throw std::invalid_argument(
        "batchnorm: training mode needs more than one value per channel");
  }
  Tensor xhat(input.shape());
  Tensor inv_std({v.channels}), mean({v.channels}), var({v.channels});
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < v.channels; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < v.batch; ++n) {
      const double* x = input.data() + (n * v.channels + c) * v.spatial;
      for (std::size_t s = 0; s < v.spatial; ++s) sum += x[s];
    }
    const double mu = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < v.batch; ++n) {
      const double* x = input.data() + (n * v.channels + c) * v.spatial;
      for (std::size_t s = 0; s < v.spatial; ++s) sq += (x[s] - mu) * (x[s] - mu);
    }
    const double sigma2 = sq / static_cast<double>(count);
    const double is = 1.0 / std::sqrt(sigma2 + eps_);
    mean[c] = mu;
    var[c] = sigma2;
    inv_std[c] = is;
    for (std::size_t n = 0; n < v.batch; ++n) {
      const std::size_t base = (n * v.channels + c) * v.spatial;
      for (std::size_t s = 0; s < v.spatial; ++s) {
        const double xh = (input[base + s] - mu) * is;
        xhat[base + s] = xh;
        output[base + s] = gamma_[c] * xh + beta_[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {std::move(xhat), std::move(inv_std), std::move(mean),
                    std::move(var)};
  }
  return output;
}

Tensor BatchNorm::backward(const Tensor& grad_output, const Cache& cache,
                           bool need_input_grad) {
  const ChannelView v = channel_view(grad_output, gamma_.size(), "batchnorm");
  Tensor grad_input;
  if (need_input_grad) grad_input = Tensor(grad_output.shape());

  if (cache.mode == Mode::kInference) {
    require_cache(cache, 2, "batchnorm");
    const Tensor& input = cache.saved[0];
    const Tensor& inv_std = cache.saved[1];
    for (std::size_t n = 0; n < v.batch; ++n) {
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (n * v.channels + c) * v.spatial;
        for (std::size_t s = 0; s < v.spatial; ++s) {
          const double dy = grad_output[base + s];
          gamma_grad_[c] += dy * (input[base + s] - running_mean_[c]) * inv_std[c];
          beta_grad_[c] += dy;
          if (need_input_grad) grad_input[base + s] = dy * gamma_[c] * inv_std[c];
        }
      }
    }
    return grad_input;
  }

  require_cache(cache, 4, "batchnorm");
  const Tensor& xhat = cache.saved[0];
  const Tensor& inv_std = cache.saved[1];
  const double count = static_cast<double>(v.batch * v.spatial);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < v.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < v.batch; ++n) {
      const std::size_t base = (n * v.channels + c) * v.spatial;
      for (std::size_t s = 0; s < v.spatial; ++s) {
        sum_dy += grad_output[base + s];
        sum_dy_xhat += grad_output[base + s] * xhat[base + s];
      }
    }
    gamma_grad_[c] += sum_dy_xhat;
    beta_grad_[c] += sum_dy;
    if (!need_input_grad) continue;
    const double scale = gamma_[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < v.batch; ++n) {
      const std::size_t base = (n * v.channels + c) * v.spatial;
      for (std::size_t s = 0; s < v.spatial; ++s) {
        grad_input[base + s] =
            scale * (count * grad_output[base + s] - sum_dy -
                     xhat[base + s] * sum_dy_xhat);
      }
    }
  }
  return grad_input;
}

void BatchNorm::commit_statistics(const Cache& cache, double momentum) {
  if (cache.mode != Mode::kTrain) return;
  require_cache(cache, 4, "batchnorm");
  const Tensor& xhat = cache.saved[0];
  const double count =
      static_cast<double>(xhat.size()) / static_cast<double>(gamma_.size());
  const Tensor& mean = cache.saved[2];
  const Tensor& var = cache.saved[3];
  for (std::size_t c = 0; c < gamma_.size(); ++c) {
    const double unbiased = var[c] * count / (count - 1.0);
    running_mean_[c] = (1.0 - momentum) * running_mean_[c] + momentum * mean[c];
    running_var_[c] = (1.0 - momentum) * running_var_[c] + momentum * unbiased;
  }
}

void BatchNorm::parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "gamma", &gamma_, &gamma_grad_, false});
  out.push_back({prefix + "beta", &beta_, &beta_grad_, false});
}

void BatchNorm::buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

void BatchNorm::initialize(Rng&) {
  gamma_.fill(1.0);
  beta_.fill(0.0);
  running_mean_.fill(0.0);
  running_var_.fill(1.0);
}

// -------------------------------------------------------- InstanceNorm2d

InstanceNorm2d::InstanceNorm2d(std::size_t channels, double eps)
    : eps_(eps),
      gamma_({channels}, 1.0),
      gamma_grad_({channels}),
      beta_({channels}),
      beta_grad_({channels}) {}

Tensor InstanceNorm2d::forward(const Tensor& input, Mode mode,
                               Cache* cache) const {
  if (input.rank() != 4) {
    throw std::invalid_argument("instancenorm: expected NCHW, got " +
                                input.shape_string());
  }
  const ChannelView v = channel_view(input, gamma_.size(), "instancenorm");
  if (v.spatial < 2) {
    throw std::invalid_argument("instancenorm: spatial extent must exceed 1");
  }
  Tensor output(input.shape());
  Tensor xhat(input.shape());
  Tensor inv_std({v.batch, v.channels});
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < v.batch * v.channels; ++nc) {
    const std::size_t c = nc % v.channels;
    const double* x = input.data() + nc * v.spatial;
    double sum = 0.0;
    for (std::size_t s = 0; s < v.spatial; ++s) sum += x[s];
    const double mu = sum / static_cast<double>(v.spatial);
    double sq = 0.0;
    for (std::size_t s = 0; s < v.spatial; ++s) sq += (x[s] - mu) * (x[s] - mu);
    const double is = 1.0 / std::sqrt(sq / static_cast<double>(v.spatial) + eps_);
    inv_std[nc] = is;
    for (std::size_t s = 0; s < v.spatial; ++s) {
      const double xh = (x[s] - mu) * is;
      xhat[nc * v.spatial + s] = xh;
      output[nc * v.spatial + s] = gamma_[c] * xh + beta_[c];
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {std::move(xhat), std::move(inv_std)};
  }
  return output;
}

Tensor InstanceNorm2d::backward(const Tensor& grad_output, const Cache& cache,
                                bool need_input_grad) {
  require_cache(cache, 2, "instancenorm");
  const ChannelView v = channel_view(grad_output, gamma_.size(), "instancenorm");
  const Tensor& xhat = cache.saved[0];
  const Tensor& inv_std = cache.saved[1];
  Tensor grad_input;
  if (need_input_grad) grad_input = Tensor(grad_output.shape());
  Tensor sums({v.batch * v.channels, 2});
  const double count = static_cast<double>(v.spatial);
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < v.batch * v.channels; ++nc) {
    const std::size_t c = nc % v.channels;
    const double* dy = grad_output.data() + nc * v.spatial;
    const double* xh = xhat.data() + nc * v.spatial;
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < v.spatial; ++s) {
      sum_dy += dy[s];
      sum_dy_xhat += dy[s] * xh[s];
    }
    sums.at(nc, 0) = sum_dy;
    sums.at(nc, 1) = sum_dy_xhat;
    if (!need_input_grad) continue;
    const double scale = gamma_[c] * inv_std[nc] / count;
    double* dx = grad_input.data() + nc * v.spatial;
    for (std::size_t s = 0; s < v.spatial; ++s) {
      dx[s] = scale * (count * dy[s] - sum_dy - xh[s] * sum_dy_xhat);
    }
  }
  for (std::size_t n = 0; n < v.batch; ++n) {
    for (std::size_t c = 0; c < v.channels; ++c) {
      beta_grad_[c] += sums.at(n * v.channels + c, 0);
      gamma_grad_[c] += sums.at(n * v.channels + c, 1);
    }
  }
  return grad_input;
}

void InstanceNorm2d::parameters(const std::string& prefix,
                                std::vector<ParamRef>& out) {
  out.push_back({prefix + "gamma", &gamma_, &gamma_grad_, false});
  out.push_back({prefix + "beta", &beta_, &beta_grad_, false});
}

void InstanceNorm2d::initialize(Rng&) {
  gamma_.fill(1.0);
  beta_.fill(0.0);
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& input, Mode mode, Cache* cache) const {
  Tensor output(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    // NaN passes through so that a poisoned input surfaces in the loss.
    output[i] = input[i] < 0.0 ? 0.0 : input[i] + 0.0;
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {output};
  }
  return output;
}

Tensor ReLU::backward(const Tensor& grad_output, const Cache& cache,
                      bool need_input_grad) {
  if (!need_input_grad) return {};
  require_cache(cache, 1, "relu");
  const Tensor& output = cache.saved[0];
  Tensor grad_input(grad_output.shape());
  for (std::size_t i = 0; i < grad_output.size(); ++i) {
    grad_input[i] = output[i] > 0.0 ? grad_output[i] : 0.0;
  }
  return grad_input;
}

// ------------------------------------------------------------- AvgPool2d

Tensor AvgPool2d::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (input.rank() != 4) {
    throw std::invalid_argument("avgpool: expected NCHW, got " + input.shape_string());
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t oh = h / kernel_, ow = w / kernel_;
  if (oh == 0 || ow == 0) {
    throw std::invalid_argument("avgpool: input smaller than kernel");
  }
  Tensor output({n, c, oh, ow});
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* x = input.data() + nc * h * w;
    double* y = output.data() + nc * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            acc += x[(oy * kernel_ + ky) * w + ox * kernel_ + kx];
          }
        }
        y[oy * ow + ox] = acc * scale;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {Tensor({4}, 0.0)};
    cache->saved[0][0] = static_cast<double>(n);
    cache->saved[0][1] = static_cast<double>(c);
    cache->saved[0][2] = static_cast<double>(h);
    cache->saved[0][3] = static_cast<double>(w);
  }
  return output;
}

Tensor AvgPool2d::backward(const Tensor& grad_output, const Cache& cache,
                           bool need_input_grad) {
  if (!need_input_grad) return {};
  require_cache(cache, 1, "avgpool");
  const auto& dims = cache.saved[0];
  const auto n = static_cast<std::size_t>(dims[0]);
  const auto c = static_cast<std::size_t>(dims[1]);
  const auto h = static_cast<std::size_t>(dims[2]);
  const auto w = static_cast<std::size_t>(dims[3]);
  const std::size_t oh = h / kernel_, ow = w / kernel_;
  Tensor grad_input({n, c, h, w});
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* dy = grad_output.data() + nc * oh * ow;
    double* dx = grad_input.data() + nc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = dy[oy * ow + ox] * scale;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            dx[(oy * kernel_ + ky) * w + ox * kernel_ + kx] = g;
          }
        }
      }
    }
  }
  return grad_input;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (input.rank() != 4) {
    throw std::invalid_argument("maxpool: expected NCHW, got " + input.shape_string());
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t oh = (h + 2 * padding_ - kernel_) / stride_ + 1;
  const std::size_t ow = (w + 2 * padding_ - kernel_) / stride_ + 1;
  Tensor output({n, c, oh, ow});
  Tensor argmax({n, c, oh, ow});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* x = input.data() + nc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(padding_);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(padding_);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        output[nc * oh * ow + oy * ow + ox] = best;
        argmax[nc * oh * ow + oy * ow + ox] = static_cast<double>(best_idx);
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {std::move(argmax), Tensor(input.shape())};
  }
  return output;
}

Tensor MaxPool2d::backward(const Tensor& grad_output, const Cache& cache,
                           bool need_input_grad) {
  if (!need_input_grad) return {};
  require_cache(cache, 2, "maxpool");
  const Tensor& argmax = cache.saved[0];
  Tensor grad_input(cache.saved[1].shape());
  const std::size_t hw = grad_input.dim(2) * grad_input.dim(3);
  const std::size_t ohw = grad_output.dim(2) * grad_output.dim(3);
  for (std::size_t nc = 0; nc < grad_output.dim(0) * grad_output.dim(1); ++nc) {
    for (std::size_t p = 0; p < ohw; ++p) {
      const auto idx = static_cast<std::size_t>(argmax[nc * ohw + p]);
      grad_input[nc * hw + idx] += grad_output[nc * ohw + p];
    }
  }
  return grad_input;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (input.rank() != 4) {
    throw std::invalid_argument("global_avgpool: expected NCHW, got " +
                                input.shape_string());
  }
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  Tensor output({n, c});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    double acc = 0.0;
    for (std::size_t s = 0; s < hw; ++s) acc += input[nc * hw + s];
    output[nc] = acc / static_cast<double>(hw);
  }
  if (cache) {
    cache->mode = mode;
    cache->saved = {Tensor({input.dim(2), input.dim(3)})};
  }
  return output;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_output, const Cache& cache,
                               bool need_input_grad) {
  if (!need_input_grad) return {};
  require_cache(cache, 1, "global_avgpool");
  const std::size_t h = cache.saved[0].dim(0), w = cache.saved[0].dim(1);
  const std::size_t n = grad_output.dim(0), c = grad_output.dim(1);
  Tensor grad_input({n, c, h, w});
  const double scale = 1.0 / static_cast<double>(h * w);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double g = grad_output[nc] * scale;
    for (std::size_t s = 0; s < h * w; ++s) grad_input[nc * h * w + s] = g;
  }
  return grad_input;
}

// ------------------------------------------------------------ Sequential

Sequential::Sequential(const Sequential& other) : names_(other.names_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Sequential::add_layer(std::string name, std::unique_ptr<Layer> layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
}

Tensor Sequential::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (cache) {
    cache->mode = mode;
    cache->saved.clear();
    cache->children.assign(layers_.size(), Cache{});
  }
  if (layers_.empty()) return input;
  Tensor x = layers_[0]->forward(input, mode, cache ? &cache->children[0] : nullptr);
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, mode, cache ? &cache->children[i] : nullptr);
  }
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output, const Cache& cache,
                            bool need_input_grad) {
  if (cache.children.size() != layers_.size()) {
    throw std::logic_error("sequential: backward called without a forward cache");
  }
  if (layers_.empty()) return need_input_grad ? grad_output : Tensor{};
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need = i > 0 || need_input_grad;
    g = layers_[i]->backward(g, cache.children[i], need);
  }
  return g;
}

void Sequential::commit_statistics(const Cache& cache, double momentum) {
  if (cache.children.size() != layers_.size()) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->commit_statistics(cache.children[i], momentum);
  }
}

void Sequential::parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->parameters(prefix + names_[i] + ".", out);
  }
}

void Sequential::buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->buffers(prefix + names_[i] + ".", out);
  }
}

void Sequential::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(std::size_t in_channels, std::size_t mid_channels,
                       std::size_t out_channels, std::size_t stride) {
  main_.add<Conv2d>("conv1", in_channels, mid_channels, 1, 1, 0);
  main_.add<BatchNorm>("bn1", mid_channels);
  main_.add<ReLU>("relu1");
  main_.add<Conv2d>("conv2", mid_channels, mid_channels, 3, stride, 1);
  main_.add<BatchNorm>("bn2", mid_channels);
  main_.add<ReLU>("relu2");
  main_.add<Conv2d>("conv3", mid_channels, out_channels, 1, 1, 0);
  main_.add<BatchNorm>("bn3", out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.add<Conv2d>("conv", in_channels, out_channels, 1, stride, 0);
    shortcut_.add<BatchNorm>("bn", out_channels);
  }
}

Tensor Bottleneck::forward(const Tensor& input, Mode mode, Cache* cache) const {
  if (cache) {
    cache->mode = mode;
    cache->children.assign(3, Cache{});
  }
  Tensor sum = main_.forward(input, mode, cache ? &cache->children[0] : nullptr);
  if (shortcut_.size() == 0) {
    sum += input;
  } else {
    sum += shortcut_.forward(input, mode, cache ? &cache->children[1] : nullptr);
  }
  return relu_.forward(sum, mode, cache ? &cache->children[2] : nullptr);
}

Tensor Bottleneck::backward(const Tensor& grad_output, const Cache& cache,
                            bool need_input_grad) {
  if (cache.children.size() != 3) {
    throw std::logic_error("bottleneck: backward called without a forward cache");
  }
  const Tensor g = relu_.backward(grad_output, cache.children[2], true);
  Tensor grad_input = main_.backward(g, cache.children[0], need_input_grad);
  if (shortcut_.size() == 0) {
    if (need_input_grad) grad_input += g;
  } else {
    Tensor gs = shortcut_.backward(g, cache.children[1], need_input_grad);
    if (need_input_grad) grad_input += gs;
  }
  return grad_input;
}

void Bottleneck::commit_statistics(const Cache& cache, double momentum) {
  if (cache.children.size() != 3) return;
  main_.commit_statistics(cache.children[0], momentum);
  if (shortcut_.size() != 0) shortcut_.commit_statistics(cache.children[1], momentum);
}

void Bottleneck::parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  main_.parameters(prefix, out);
  shortcut_.parameters(prefix + "downsample.", out);
}

void Bottleneck::buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  main_.buffers(prefix, out);
  shortcut_.buffers(prefix + "downsample.", out);
}

void Bottleneck::initialize(Rng& rng) {
  main_.initialize(rng);
  shortcut_.initialize(rng);
}

}  // namespace dgreid
