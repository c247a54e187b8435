#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dgreid/layers.hpp"
#include "dgreid/tensor.hpp"

namespace dgreid {

using NamedTensors = std::map<std::string, Tensor>;

enum class BackboneKind { kTiny, kResNet50 };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kTiny;
  std::size_t input_height = 256;
  std::size_t input_width = 128;
  std::size_t feature_dim = 64;
  // Instance normalization in the early blocks (used for the global extractor).
  bool instance_norm = false;

  // Tiny backbone: fixed average-pool stem, then four conv blocks whose
  // widths are {widths[0], widths[1], widths[2], feature_dim}.
  std::size_t stem_pool = 4;
  std::array<std::size_t, 3> widths{16, 32, 64};

  // Residual backbone: feature_dim must equal 32 * base_width.
  std::size_t resnet_base_width = 64;
  std::array<std::size_t, 4> resnet_blocks{3, 4, 6, 3};

  static BackboneConfig tiny(std::size_t feature_dim = 64);
  static BackboneConfig resnet50();
};

// Convolutional feature extractor F / F_i: image batch (N, 3, H, W) ->
// features (N, feature_dim).
class FeatureExtractor {
 public:
  FeatureExtractor(BackboneConfig config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  std::size_t feature_dim() const { return config_.feature_dim; }

  Tensor extract(const Tensor& images, Mode mode = Mode::kInference,
                 Cache* cache = nullptr) const;
  // Accumulates parameter gradients; image gradients are never needed.
  void backward(const Tensor& grad_features, const Cache& cache);
  void commit_statistics(const Cache& cache, double momentum);

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();
  NamedTensors state() const;
  void load_state(const NamedTensors& state, const std::string& prefix = "");

 private:
  BackboneConfig config_;
  Sequential net_;
};

// Read-only view of a pretrained extractor. Its outputs feed downstream
// trainable modules, but nothing can reach its parameters or statistics.
class FrozenExtractor {
 public:
  explicit FrozenExtractor(std::shared_ptr<const FeatureExtractor> extractor);

  Tensor extract(const Tensor& images) const;
  const FeatureExtractor& extractor() const { return *extractor_; }
  std::size_t feature_dim() const { return extractor_->feature_dim(); }

 private:
  std::shared_ptr<const FeatureExtractor> extractor_;
};

FrozenExtractor freeze(FeatureExtractor extractor);

// Domain-generalized encoder E: Linear -> BN -> ReLU -> Linear -> BN.
class Encoder {
 public:
  Encoder(std::size_t feature_dim, std::size_t embedding_dim, std::uint64_t seed);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  Tensor encode(const Tensor& features, Mode mode = Mode::kInference,
                Cache* cache = nullptr) const;
  // Returns the gradient with respect to the encoder input.
  Tensor backward(const Tensor& grad_embeddings, const Cache& cache);
  void commit_statistics(const Cache& cache, double momentum);

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();
  NamedTensors state() const;
  void load_state(const NamedTensors& state, const std::string& prefix = "");

  Sequential& network() { return net_; }

 private:
  std::size_t feature_dim_, embedding_dim_;
  Sequential net_;
};

// Identity classifier C over the global label space.
class Classifier {
 public:
  Classifier(std::size_t embedding_dim, std::size_t num_classes, std::uint64_t seed);

  std::size_t num_classes() const { return num_classes_; }

  Tensor logits(const Tensor& embeddings, Cache* cache = nullptr) const;
  Tensor classify(const Tensor& embeddings) const;
  Tensor backward(const Tensor& grad_logits, const Cache& cache);

  std::vector<ParamRef> parameters();
  NamedTensors state() const;
  void load_state(const NamedTensors& state, const std::string& prefix = "");

  Linear& layer() { return fc_; }

 private:
  std::size_t embedding_dim_, num_classes_;
  Linear fc_;
};

// Row-wise softmax of a (rows, classes) logit matrix.
Tensor softmax_rows(const Tensor& logits);

void zero_grad(std::vector<ParamRef>& params);

// Copies tensors named `prefix + name` from `state` into the references.
void load_named(std::vector<ParamRef> params, std::vector<BufferRef> buffers,
                const NamedTensors& state, const std::string& prefix);
NamedTensors collect_named(std::vector<ParamRef> params,
                           std::vector<BufferRef> buffers);

}  // namespace dgreid
