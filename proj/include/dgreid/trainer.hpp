#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dgreid/checkpoint.hpp"
#include "dgreid/data.hpp"
#include "dgreid/losses.hpp"
#include "dgreid/model.hpp"

namespace dgreid {

struct TrainConfig {
  int epochs = 150;
  int lr_drop_epoch = 100;  // epochs after this one use the dropped rate
  double learning_rate = 0.01;
  double dropped_learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double bn_momentum = 0.1;
  LossWeights weights;
  SmoothingVariant smoothing_variant = SmoothingVariant::kOffClass;
  std::size_t identities_per_batch = 4;  // P
  std::size_t images_per_identity = 4;   // K
  bool augment = true;
  AugmentConfig augmentation;
  Normalization normalization;
  std::uint64_t seed = 0;

  // Full-length schedule: 150 epochs, rate drop after epoch 100.
  static TrainConfig full_scale();
  // Same schedule family shrunk to `epochs`, dropping after 2/3 of them.
  static TrainConfig scaled(int epochs);
  static TrainConfig desk() { return scaled(15); }
  static TrainConfig pretrain_desk() { return scaled(10); }

  std::size_t batch_size() const { return identities_per_batch * images_per_identity; }
  void validate() const;
};

// Learning rate for a 1-based epoch.
double learning_rate_at(const TrainConfig& config, int epoch);

struct ModelConfig {
  BackboneConfig global_backbone;   // F
  BackboneConfig domain_backbone;   // F_i
  std::size_t embedding_dim = 32;

  static ModelConfig tiny();
  static ModelConfig resnet50();
};

// ------------------------------------------------------------ sampling

struct SampleRef {
  std::size_t domain = 0;  // index into SourceCollection::domains
  std::size_t sample = 0;  // index into that domain's samples
};

struct EpisodeBatch {
  std::size_t domain_i = 0, domain_j = 0, domain_k = 0;
  std::vector<SampleRef> samples;  // P x K, identity-major
  std::vector<Label> local_labels;
  std::vector<Label> global_labels;
  bool sampled_with_replacement = false;
};

// Draws P identities and K images each from `domain` (with replacement only
// for identities holding fewer than K images).
void sample_identities(const DomainDataset& domain, std::size_t domain_index,
                       std::size_t p, std::size_t k, Rng& rng, EpisodeBatch& batch);

EpisodeBatch sample_episode(const SourceCollection& collection, std::size_t p,
                            std::size_t k, Rng& rng);

// Preprocesses (and, when enabled, augments) the referenced images into an
// (N, 3, H, W) tensor. Per-slot random streams are keyed by `stream_key`.
Tensor load_batch(std::span<const DomainDataset> domains,
                  const std::vector<SampleRef>& samples, const TrainConfig& config,
                  std::uint64_t stream_key, bool augment,
                  std::size_t height = kImageHeight, std::size_t width = kImageWidth);

// ------------------------------------------------------------ Stage 1

struct PretrainResult {
  FeatureExtractor extractor;
  std::vector<double> epoch_loss;  // mean batch-hard triplet loss per epoch
};

PretrainResult pretrain_domain_extractor(const DomainDataset& domain,
                                         const BackboneConfig& backbone,
                                         const TrainConfig& config);

// ------------------------------------------------------------ Stage 2

struct EpisodicModel {
  FeatureExtractor extractor;  // F
  Encoder encoder;             // E
  Classifier classifier;       // C

  EpisodicModel(const ModelConfig& config, std::size_t num_classes, std::uint64_t seed);

  std::vector<ParamRef> parameters();
  NamedTensors state() const;
  void load_state(const NamedTensors& state);
};

// SGD with momentum and decoupled-by-name weight decay (decay applies to
// conv/linear weights only).
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamRef>& params, double learning_rate);

  NamedTensors& buffers() { return buffers_; }
  const NamedTensors& buffers() const { return buffers_; }

 private:
  double momentum_, weight_decay_;
  NamedTensors buffers_;
};

struct StepMetrics {
  std::size_t iteration = 0;  // 1-based, global
  int epoch = 0;              // 1-based
  double learning_rate = 0.0;
  double cls = 0.0;
  double triplet = 0.0;
  double consistency = 0.0;
  double total = 0.0;
  std::size_t domain_i = 0, domain_j = 0, domain_k = 0;
};

struct TrainState {
  EpisodicModel model;
  SgdOptimizer optimizer;
  int epoch = 0;               // completed epochs
  std::size_t iteration = 0;   // completed steps
  // Frozen domain-specific extractors, indexed like the source domains.
  std::vector<FrozenExtractor> bank;

  TrainState(const ModelConfig& model_config, std::size_t num_classes,
             const TrainConfig& config, std::vector<FrozenExtractor> bank);
};

// Which loss terms contribute gradients; values are always reported when
// the frozen paths are available.
struct LossTerms {
  bool cls = true;
  bool triplet = true;
  bool consistency = true;
};

struct EpisodeLosses {
  double cls = 0.0, triplet = 0.0, consistency = 0.0, total = 0.0;
};

// Forward + backward of the episodic objective on one batch: accumulates
// weighted gradients for the selected terms into the model's grad tensors
// (callers zero them first). Running statistics are not touched; the
// returned caches let the caller commit them.
struct EpisodeForward {
  EpisodeLosses losses;
  Cache extractor_cache;
  Cache encoder_cache;
};
EpisodeForward episodic_objective(EpisodicModel& model,
                                  const std::vector<FrozenExtractor>& bank,
                                  const EpisodeBatch& batch, const Tensor& images,
                                  const TrainConfig& config,
                                  const LossTerms& terms = {});

// Loss value only (no gradient, no state change); used for finite differences.
EpisodeLosses episodic_loss_value(const EpisodicModel& model,
                                  const std::vector<FrozenExtractor>& bank,
                                  const EpisodeBatch& batch, const Tensor& images,
                                  const TrainConfig& config);

// One optimizer step on the total loss. Throws NumericError (naming the
// batch's sample indices) on a non-finite loss.
StepMetrics episodic_step(TrainState& state, const EpisodeBatch& batch,
                          const Tensor& images, const TrainConfig& config,
                          double learning_rate);

// Cross-entropy-only step through F -> E -> C (the single-extractor baseline).
StepMetrics classification_step(TrainState& state, const EpisodeBatch& batch,
                                const Tensor& images, const TrainConfig& config,
                                double learning_rate);

enum class TrainVariant { kEpisodic, kBaseline };

struct TrainOptions {
  std::filesystem::path output_dir;  // empty: no checkpoints or logs
  std::optional<std::filesystem::path> resume_from;
  std::optional<int> stop_after_epoch;  // simulate interruption
  TrainVariant variant = TrainVariant::kEpisodic;
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const std::string&)> on_message;
};

struct TrainResult {
  TrainState state;
  std::vector<StepMetrics> log;
  std::vector<double> epoch_learning_rates;
};

std::size_t iterations_per_epoch(const SourceCollection& collection,
                                 const TrainConfig& config);

TrainResult train(const SourceCollection& collection,
                  std::vector<FrozenExtractor> bank, const ModelConfig& model_config,
                  const TrainConfig& config, const TrainOptions& options = {});

// Checkpoint helpers shared with the CLI.
Checkpoint make_extractor_checkpoint(const FeatureExtractor& extractor,
                                     const std::string& stage, int epoch,
                                     std::uint64_t seed, int domain_id);
FeatureExtractor extractor_from_checkpoint(const Checkpoint& ckpt,
                                           const BackboneConfig& backbone);
Checkpoint make_train_checkpoint(const TrainState& state, const ModelConfig& model_config,
                                 const TrainConfig& config, const std::string& stage);
void restore_train_state(TrainState& state, const Checkpoint& ckpt);

std::string format_metrics(const StepMetrics& m);
nlohmann::json metrics_to_json(const StepMetrics& m);

}  // namespace dgreid
