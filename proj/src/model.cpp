#include "dgreid/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dgreid/errors.hpp"
#include "dgreid/rng.hpp"

namespace dgreid {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kTiny ? "tiny" : "resnet50";
}

BackboneKind backbone_kind_from_string(const std::string& name) {
  if (name == "tiny") return BackboneKind::kTiny;
  if (name == "resnet50") return BackboneKind::kResNet50;
  throw ConfigError("unknown backbone kind '" + name + "' (expected tiny or resnet50)");
}

BackboneConfig BackboneConfig::tiny(std::size_t feature_dim) {
  BackboneConfig c;
  c.kind = BackboneKind::kTiny;
  c.feature_dim = feature_dim;
  return c;
}

BackboneConfig BackboneConfig::resnet50() {
  BackboneConfig c;
  c.kind = BackboneKind::kResNet50;
  c.feature_dim = 2048;
  return c;
}

namespace {

void add_norm(Sequential& net, const std::string& name, std::size_t channels,
              bool instance) {
  if (instance) {
    net.add<InstanceNorm2d>(name, channels);
  } else {
    net.add<BatchNorm>(name, channels);
  }
}

Sequential build_tiny(const BackboneConfig& c) {
  Sequential net;
  if (c.stem_pool > 1) net.add<AvgPool2d>("stem", c.stem_pool);
  const std::array<std::size_t, 5> ch{3, c.widths[0], c.widths[1], c.widths[2],
                                      c.feature_dim};
  for (std::size_t b = 0; b < 4; ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    net.add<Conv2d>(p + ".conv", ch[b], ch[b + 1], 3, b == 0 ? 1 : 2, 1);
    add_norm(net, p + ".norm", ch[b + 1], c.instance_norm && b < 2);
    net.add<ReLU>(p + ".relu");
  }
  net.add<GlobalAvgPool>("pool");
  return net;
}

Sequential build_resnet(const BackboneConfig& c) {
  if (c.feature_dim != 32 * c.resnet_base_width) {
    throw ConfigError("resnet backbone: feature_dim must be 32 * base_width (" +
                      std::to_string(32 * c.resnet_base_width) + ")");
  }
  Sequential net;
  const std::size_t base = c.resnet_base_width;
  net.add<Conv2d>("conv1", 3, base, 7, 2, 3);
  net.add<BatchNorm>("bn1", base);
  net.add<ReLU>("relu");
  net.add<MaxPool2d>("maxpool", 3, 2, 1);
  std::size_t in = base;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t mid = base << stage;
    const std::size_t out = mid * 4;
    for (std::size_t b = 0; b < c.resnet_blocks[stage]; ++b) {
      const std::size_t stride = (b == 0 && stage > 0) ? 2 : 1;
      net.add<Bottleneck>("layer" + std::to_string(stage + 1) + "." + std::to_string(b),
                          in, mid, out, stride);
      in = out;
    }
    if (c.instance_norm && stage < 2) {
      net.add<InstanceNorm2d>("layer" + std::to_string(stage + 1) + ".in", out);
    }
  }
  net.add<GlobalAvgPool>("pool");
  return net;
}

void check_features(const Tensor& features, std::size_t dim, const char* who) {
  if (features.rank() != 2 || features.dim(1) != dim) {
    throw std::invalid_argument(std::string(who) + ": expected (batch, " +
                                std::to_string(dim) + ") input, got " +
                                features.shape_string());
  }
}

}  // namespace

void zero_grad(std::vector<ParamRef>& params) {
  for (auto& p : params) p.grad->fill(0.0);
}

void load_named(std::vector<ParamRef> params, std::vector<BufferRef> buffers,
                const NamedTensors& state, const std::string& prefix) {
  auto load_one = [&](const std::string& name, Tensor& dst) {
    auto it = state.find(prefix + name);
    if (it == state.end()) {
      throw CheckpointError("missing tensor '" + prefix + name + "'");
    }
    if (!it->second.same_shape(dst)) {
      throw CheckpointError("tensor '" + prefix + name + "' has shape " +
                            it->second.shape_string() + ", expected " +
                            dst.shape_string());
    }
    dst = it->second;
  };
  for (auto& p : params) load_one(p.name, *p.value);
  for (auto& b : buffers) load_one(b.name, *b.value);
}

NamedTensors collect_named(std::vector<ParamRef> params,
                           std::vector<BufferRef> buffers) {
  NamedTensors out;
  for (auto& p : params) out.emplace(p.name, *p.value);
  for (auto& b : buffers) out.emplace(b.name, *b.value);
  return out;
}

// ------------------------------------------------------ FeatureExtractor

FeatureExtractor::FeatureExtractor(BackboneConfig config, std::uint64_t seed)
    : config_(config),
      net_(config.kind == BackboneKind::kTiny ? build_tiny(config)
                                              : build_resnet(config)) {
  Rng rng = make_rng(seed, {0xFE});
  net_.initialize(rng);
}

Tensor FeatureExtractor::extract(const Tensor& images, Mode mode,
                                 Cache* cache) const {
  if (images.rank() != 4 || images.dim(1) != 3 ||
      images.dim(2) != config_.input_height || images.dim(3) != config_.input_width) {
    throw std::invalid_argument(
        "extract: expected image batch (N, 3, " + std::to_string(config_.input_height) +
        ", " + std::to_string(config_.input_width) + "), got " + images.shape_string());
  }
  return net_.forward(images, mode, cache);
}

void FeatureExtractor::backward(const Tensor& grad_features, const Cache& cache) {
  net_.backward(grad_features, cache, false);
}

void FeatureExtractor::commit_statistics(const Cache& cache, double momentum) {
  net_.commit_statistics(cache, momentum);
}

std::vector<ParamRef> FeatureExtractor::parameters() {
  std::vector<ParamRef> out;
  net_.parameters("", out);
  return out;
}

std::vector<BufferRef> FeatureExtractor::buffers() {
  std::vector<BufferRef> out;
  net_.buffers("", out);
  return out;
}

NamedTensors FeatureExtractor::state() const {
  // Read-only traversal; the references are copied out immediately.
  auto& self = const_cast<FeatureExtractor&>(*this);
  return collect_named(self.parameters(), self.buffers());
}

void FeatureExtractor::load_state(const NamedTensors& state, const std::string& prefix) {
  load_named(parameters(), buffers(), state, prefix);
}

// ------------------------------------------------------ FrozenExtractor

FrozenExtractor::FrozenExtractor(std::shared_ptr<const FeatureExtractor> extractor)
    : extractor_(std::move(extractor)) {
  if (!extractor_) throw std::invalid_argument("freeze: null extractor");
}

Tensor FrozenExtractor::extract(const Tensor& images) const {
  return extractor_->extract(images, Mode::kInference, nullptr);
}

FrozenExtractor freeze(FeatureExtractor extractor) {
  return FrozenExtractor(std::make_shared<const FeatureExtractor>(std::move(extractor)));
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(std::size_t feature_dim, std::size_t embedding_dim,
                 std::uint64_t seed)
    : feature_dim_(feature_dim), embedding_dim_(embedding_dim) {
  net_.add<Linear>("fc1", feature_dim, embedding_dim);
  net_.add<BatchNorm>("bn1", embedding_dim);
  net_.add<ReLU>("relu");
  net_.add<Linear>("fc2", embedding_dim, embedding_dim);
  net_.add<BatchNorm>("bn2", embedding_dim);
  Rng rng = make_rng(seed, {0xE0});
  net_.initialize(rng);
}

Tensor Encoder::encode(const Tensor& features, Mode mode, Cache* cache) const {
  check_features(features, feature_dim_, "encode");
  return net_.forward(features, mode, cache);
}

Tensor Encoder::backward(const Tensor& grad_embeddings, const Cache& cache) {
  return net_.backward(grad_embeddings, cache, true);
}

void Encoder::commit_statistics(const Cache& cache, double momentum) {
  net_.commit_statistics(cache, momentum);
}

std::vector<ParamRef> Encoder::parameters() {
  std::vector<ParamRef> out;
  net_.parameters("", out);
  return out;
}

std::vector<BufferRef> Encoder::buffers() {
  std::vector<BufferRef> out;
  net_.buffers("", out);
  return out;
}

NamedTensors Encoder::state() const {
  auto& self = const_cast<Encoder&>(*this);
  return collect_named(self.parameters(), self.buffers());
}

void Encoder::load_state(const NamedTensors& state, const std::string& prefix) {
  load_named(parameters(), buffers(), state, prefix);
}

// ------------------------------------------------------------- Classifier

Classifier::Classifier(std::size_t embedding_dim, std::size_t num_classes,
                       std::uint64_t seed)
    : embedding_dim_(embedding_dim), num_classes_(num_classes),
      fc_(embedding_dim, num_classes) {
  if (num_classes == 0) throw std::invalid_argument("classifier: zero classes");
  Rng rng = make_rng(seed, {0xC1});
  fc_.initialize(rng);
}

Tensor Classifier::logits(const Tensor& embeddings, Cache* cache) const {
  check_features(embeddings, embedding_dim_, "classify");
  return fc_.forward(embeddings, Mode::kTrain, cache);
}

Tensor Classifier::classify(const Tensor& embeddings) const {
  return softmax_rows(logits(embeddings));
}

Tensor Classifier::backward(const Tensor& grad_logits, const Cache& cache) {
  return fc_.backward(grad_logits, cache, true);
}

std::vector<ParamRef> Classifier::parameters() {
  std::vector<ParamRef> out;
  fc_.parameters("", out);
  return out;
}

NamedTensors Classifier::state() const {
  auto& self = const_cast<Classifier&>(*this);
  return collect_named(self.parameters(), {});
}

void Classifier::load_state(const NamedTensors& state, const std::string& prefix) {
  load_named(parameters(), {}, state, prefix);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("softmax: expected rank-2 logits");
  }
  Tensor out(logits.shape());
  const std::size_t cols = logits.dim(1);
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    const double* z = logits.data() + r * cols;
    double* p = out.data() + r * cols;
    double zmax = z[0];
    for (std::size_t c = 1; c < cols; ++c) zmax = std::max(zmax, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(z[c] - zmax);
      sum += p[c];
    }
    for (std::size_t c = 0; c < cols; ++c) p[c] /= sum;
  }
  return out;
}

}  // namespace dgreid
