#pragma once

// Differentiable layers with explicit forward/backward passes.
//
// forward() is const: it never touches parameters or running statistics and
// records what backward() needs in a Cache. Training-mode normalization
// layers expose their batch statistics through the cache; the owner decides
// whether to fold them into the running estimates via commit_statistics().
// backward() accumulates parameter gradients into the layer's grad tensors.

#include <memory>
#include <string>
#include <vector>

#include "dgreid/rng.hpp"
#include "dgreid/tensor.hpp"

namespace dgreid {

enum class Mode { kTrain, kInference };

struct Cache {
  Mode mode = Mode::kInference;
  std::vector<Tensor> saved;
  std::vector<Cache> children;
};

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  bool weight_decay = true;
};

struct BufferRef {
  std::string name;
  Tensor* value = nullptr;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& input, Mode mode, Cache* cache) const = 0;
  virtual Tensor backward(const Tensor& grad_output, const Cache& cache,
                          bool need_input_grad) = 0;
  virtual void commit_statistics(const Cache& /*cache*/, double /*momentum*/) {}

  virtual void parameters(const std::string& /*prefix*/,
                          std::vector<ParamRef>& /*out*/) {}
  virtual void buffers(const std::string& /*prefix*/,
                       std::vector<BufferRef>& /*out*/) {}
  virtual void initialize(Rng& /*rng*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias = false);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2d>(*this);
  }

 private:
  std::size_t stride_, padding_;
  Tensor weight_, weight_grad_;
  Tensor bias_, bias_grad_;
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in_features, std::size_t out_features, bool bias = true);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Linear>(*this);
  }

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_, weight_grad_;
  Tensor bias_, bias_grad_;
};

// Batch normalization over (N, C) or (N, C, H, W); statistics per channel.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double eps = 1e-5);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void commit_statistics(const Cache& cache, double momentum) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<BatchNorm>(*this);
  }

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  double eps_;
  Tensor gamma_, gamma_grad_, beta_, beta_grad_;
  Tensor running_mean_, running_var_;
};

// Affine instance normalization; identical in train and inference modes.
class InstanceNorm2d final : public Layer {
 public:
  explicit InstanceNorm2d(std::size_t channels, double eps = 1e-5);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<InstanceNorm2d>(*this);
  }

 private:
  double eps_;
  Tensor gamma_, gamma_grad_, beta_, beta_grad_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ReLU>(*this);
  }
};

// Non-overlapping k x k average pooling.
class AvgPool2d final : public Layer {
 public:
  explicit AvgPool2d(std::size_t kernel) : kernel_(kernel) {}

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<AvgPool2d>(*this);
  }

 private:
  std::size_t kernel_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MaxPool2d>(*this);
  }

 private:
  std::size_t kernel_, stride_, padding_;
};

// (N, C, H, W) -> (N, C)
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPool>(*this);
  }
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void commit_statistics(const Cache& cache, double momentum) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Sequential>(*this);
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Residual bottleneck: 1x1 -> 3x3(stride) -> 1x1 with batch normalization,
// projection shortcut when shape changes, ReLU after the sum.
class Bottleneck final : public Layer {
 public:
  Bottleneck(std::size_t in_channels, std::size_t mid_channels,
             std::size_t out_channels, std::size_t stride);

  Tensor forward(const Tensor& input, Mode mode, Cache* cache) const override;
  Tensor backward(const Tensor& grad_output, const Cache& cache,
                  bool need_input_grad) override;
  void commit_statistics(const Cache& cache, double momentum) override;
  void parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Bottleneck>(*this);
  }

 private:
  Sequential main_;
  Sequential shortcut_;  // empty means identity
  ReLU relu_;
};

}  // namespace dgreid
