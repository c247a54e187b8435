#include "dgreid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

// Stream keys for derive_seed; distinct per use so streams never overlap.
namespace {
constexpr std::uint64_t kPretrainInit = 0x57A6E1;
constexpr std::uint64_t kPretrainSample = 0x51;
constexpr std::uint64_t kPretrainAugment = 0x52;
constexpr std::uint64_t kEpisodeSample = 0x61;
constexpr std::uint64_t kEpisodeAugment = 0x62;
constexpr std::uint64_t kModelInit = 0x63;
}  // namespace

TrainConfig TrainConfig::full_scale() { return TrainConfig{}; }

TrainConfig TrainConfig::scaled(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr_drop_epoch = static_cast<int>(std::lround(epochs * 2.0 / 3.0));
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (lr_drop_epoch < 0 || lr_drop_epoch >= epochs) {
    throw ConfigError("lr_drop_epoch must lie in [0, epochs), got " +
                      std::to_string(lr_drop_epoch) + " with epochs " +
                      std::to_string(epochs));
  }
  if (!(learning_rate >= 0.0) || !(dropped_learning_rate >= 0.0)) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (bn_momentum <= 0.0 || bn_momentum > 1.0) {
    throw ConfigError("bn_momentum must lie in (0, 1]");
  }
  if (identities_per_batch < 2) throw ConfigError("need at least 2 identities per batch");
  if (images_per_identity < 2) throw ConfigError("need at least 2 images per identity");
  weights.validate();
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return epoch <= config.lr_drop_epoch ? config.learning_rate
                                       : config.dropped_learning_rate;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig m;
  m.global_backbone = BackboneConfig::tiny(64);
  m.global_backbone.instance_norm = true;
  m.domain_backbone = BackboneConfig::tiny(64);
  m.embedding_dim = 32;
  return m;
}

ModelConfig ModelConfig::resnet50() {
  ModelConfig m;
  m.global_backbone = BackboneConfig::resnet50();
  m.global_backbone.instance_norm = true;
  m.domain_backbone = BackboneConfig::resnet50();
  m.embedding_dim = 512;
  return m;
}

// ------------------------------------------------------------ sampling

void sample_identities(const DomainDataset& domain, std::size_t domain_index,
                       std::size_t p, std::size_t k, Rng& rng, EpisodeBatch& batch) {
  if (domain.num_identities < p) {
    throw DataError("domain '" + domain.name + "' has " +
                    std::to_string(domain.num_identities) +
                    " identities, fewer than the " + std::to_string(p) +
                    " needed per batch");
  }
  const auto groups = domain.by_identity();
  std::vector<std::size_t> ids(groups.size());
  std::iota(ids.begin(), ids.end(), 0);
  // Partial Fisher-Yates: the first p entries become the chosen identities.
  for (std::size_t a = 0; a < p; ++a) {
    std::swap(ids[a], ids[a + uniform_index(rng, ids.size() - a)]);
  }
  for (std::size_t a = 0; a < p; ++a) {
    const auto& members = groups[ids[a]];
    std::vector<std::size_t> picks;
    if (members.size() >= k) {
      std::vector<std::size_t> pool = members;
      for (std::size_t b = 0; b < k; ++b) {
        std::swap(pool[b], pool[b + uniform_index(rng, pool.size() - b)]);
      }
      picks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      batch.sampled_with_replacement = true;
      for (std::size_t b = 0; b < k; ++b) {
        picks.push_back(members[uniform_index(rng, members.size())]);
      }
    }
    for (std::size_t s : picks) {
      batch.samples.push_back({domain_index, s});
      batch.local_labels.push_back(ids[a]);
    }
  }
}

EpisodeBatch sample_episode(const SourceCollection& collection, std::size_t p,
                            std::size_t k, Rng& rng) {
  const std::size_t n = collection.domains.size();
  if (n < 3) {
    throw DataError("episodic training needs at least 3 source domains, got " +
                    std::to_string(n));
  }
  EpisodeBatch batch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t a = 0; a < 3; ++a) {
    std::swap(order[a], order[a + uniform_index(rng, n - a)]);
  }
  batch.domain_i = order[0];
  batch.domain_j = order[1];
  batch.domain_k = order[2];
  const DomainDataset& d = collection.domains[batch.domain_i];
  sample_identities(d, batch.domain_i, p, k, rng, batch);
  for (Label l : batch.local_labels) {
    batch.global_labels.push_back(collection.label_map.global(d.domain_id, l));
  }
  return batch;
}

namespace {

// Baseline batches: any single source domain, no auxiliary domains.
EpisodeBatch sample_single_domain(const SourceCollection& collection, std::size_t p,
                                  std::size_t k, Rng& rng) {
  EpisodeBatch batch;
  batch.domain_i = uniform_index(rng, collection.domains.size());
  batch.domain_j = batch.domain_k = batch.domain_i;
  const DomainDataset& d = collection.domains[batch.domain_i];
  sample_identities(d, batch.domain_i, p, k, rng, batch);
  for (Label l : batch.local_labels) {
    batch.global_labels.push_back(collection.label_map.global(d.domain_id, l));
  }
  return batch;
}

}  // namespace

Tensor load_batch(std::span<const DomainDataset> domains,
                  const std::vector<SampleRef>& samples, const TrainConfig& config,
                  std::uint64_t stream_key, bool augment_images, std::size_t height,
                  std::size_t width) {
  Tensor batch({samples.size(), 3, height, width});
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t slot = 0; slot < samples.size(); ++slot) {
    try {
      const ImageSample& s = domains[samples[slot].domain].samples[samples[slot].sample];
      std::shared_ptr<const RawImage> pixels = s.pixels;
      if (!pixels) pixels = std::make_shared<const RawImage>(read_png(s.path));
      Image img = preprocess(*pixels, config.normalization, height, width);
      if (augment_images) {
        Rng rng = make_rng(stream_key, {slot});
        img = augment(img, rng, config.augmentation);
      }
      write_to_batch(img, batch, slot);
    } catch (const std::exception& e) {
#pragma omp critical(load_batch_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw DataError(error);
  return batch;
}

// ------------------------------------------------------------ optimizer

void SgdOptimizer::step(std::vector<ParamRef>& params, double learning_rate) {
  for (auto& p : params) {
    auto it = buffers_.find(p.name);
    if (it == buffers_.end()) {
      it = buffers_.emplace(p.name, Tensor(p.value->shape(), 0.0)).first;
    }
    Tensor& buf = it->second;
    const double decay = p.weight_decay ? weight_decay_ : 0.0;
    double* v = p.value->data();
    const double* g = p.grad->data();
    double* b = buf.data();
    for (std::size_t n = 0; n < buf.size(); ++n) {
      b[n] = momentum_ * b[n] + g[n] + decay * v[n];
      v[n] -= learning_rate * b[n];
    }
  }
}

// ------------------------------------------------------------ Stage 1

PretrainResult pretrain_domain_extractor(const DomainDataset& domain,
                                         const BackboneConfig& backbone,
                                         const TrainConfig& config) {
  config.validate();
  const auto domain_key = static_cast<std::uint64_t>(domain.domain_id);
  PretrainResult result{
      FeatureExtractor(backbone, derive_seed(config.seed, {kPretrainInit, domain_key})),
      {}};
  FeatureExtractor& f = result.extractor;
  SgdOptimizer opt(config.momentum, config.weight_decay);
  const std::size_t bs = config.batch_size();
  const std::size_t iters = (domain.num_images() + bs - 1) / bs;
  std::span<const DomainDataset> one(&domain, 1);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    double sum = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const auto e = static_cast<std::uint64_t>(epoch);
      Rng rng = make_rng(config.seed, {kPretrainSample, domain_key, e, it});
      EpisodeBatch batch;
      sample_identities(domain, 0, config.identities_per_batch,
                        config.images_per_identity, rng, batch);
      const Tensor images =
          load_batch(one, batch.samples, config,
                     derive_seed(config.seed, {kPretrainAugment, domain_key, e, it}),
                     config.augment, backbone.input_height, backbone.input_width);
      Cache cache;
      const Tensor feats = f.extract(images, Mode::kTrain, &cache);
      const LossAndGrad loss = batch_hard_triplet_loss_with_grad(
          feats, batch.local_labels, config.weights.margin);
      if (!std::isfinite(loss.value)) {
        throw NumericError("pretraining domain '" + domain.name +
                           "': non-finite triplet loss at epoch " +
                           std::to_string(epoch) + ", iteration " + std::to_string(it));
      }
      auto params = f.parameters();
      zero_grad(params);
      f.backward(loss.grad, cache);
      f.commit_statistics(cache, config.bn_momentum);
      opt.step(params, lr);
      sum += loss.value;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(iters));
  }
  return result;
}

// ------------------------------------------------------------ Stage 2

EpisodicModel::EpisodicModel(const ModelConfig& config, std::size_t num_classes,
                             std::uint64_t seed)
    : extractor(config.global_backbone, derive_seed(seed, {kModelInit, 1})),
      encoder(config.global_backbone.feature_dim, config.embedding_dim,
              derive_seed(seed, {kModelInit, 2})),
      classifier(config.embedding_dim, num_classes, derive_seed(seed, {kModelInit, 3})) {
  if (config.domain_backbone.feature_dim != config.global_backbone.feature_dim) {
    throw ConfigError("global and domain-specific extractors must share a feature size");
  }
}

std::vector<ParamRef> EpisodicModel::parameters() {
  std::vector<ParamRef> out;
  auto add = [&out](std::vector<ParamRef> ps, const std::string& prefix) {
    for (auto& p : ps) {
      p.name = prefix + p.name;
      out.push_back(p);
    }
  };
  add(extractor.parameters(), "F.");
  add(encoder.parameters(), "E.");
  add(classifier.parameters(), "C.");
  return out;
}

NamedTensors EpisodicModel::state() const {
  NamedTensors out;
  merge_prefixed(out, extractor.state(), "F.");
  merge_prefixed(out, encoder.state(), "E.");
  merge_prefixed(out, classifier.state(), "C.");
  return out;
}

void EpisodicModel::load_state(const NamedTensors& state) {
  extractor.load_state(state, "F.");
  encoder.load_state(state, "E.");
  classifier.load_state(state, "C.");
}

TrainState::TrainState(const ModelConfig& model_config, std::size_t num_classes,
                       const TrainConfig& config, std::vector<FrozenExtractor> frozen)
    : model(model_config, num_classes, config.seed),
      optimizer(config.momentum, config.weight_decay),
      bank(std::move(frozen)) {}

namespace {

void scale(Tensor& t, double s) {
  for (double& v : t.values()) v *= s;
}

bool wants_frozen_paths(const TrainConfig& config, const LossTerms& terms) {
  return (terms.triplet && config.weights.triplet != 0.0) ||
         (terms.consistency && config.weights.consistency != 0.0);
}

void check_bank(const std::vector<FrozenExtractor>& bank, const EpisodeBatch& batch) {
  for (std::size_t d : {batch.domain_j, batch.domain_k}) {
    if (d >= bank.size()) {
      throw CheckpointError("no frozen extractor for source domain index " +
                            std::to_string(d));
    }
  }
}

}  // namespace

EpisodeForward episodic_objective(EpisodicModel& model,
                                  const std::vector<FrozenExtractor>& bank,
                                  const EpisodeBatch& batch, const Tensor& images,
                                  const TrainConfig& config, const LossTerms& terms) {
  const LossWeights& w = config.weights;
  EpisodeForward out;
  Cache classifier_cache;
  const Tensor f = model.extractor.extract(images, Mode::kTrain, &out.extractor_cache);
  const Tensor v = model.encoder.encode(f, Mode::kTrain, &out.encoder_cache);
  const Tensor z = model.classifier.logits(v, &classifier_cache);
  const LossAndGrad cls = smoothed_cross_entropy_with_logits(
      z, batch.global_labels, w.smoothing, config.smoothing_variant);
  out.losses.cls = cls.value;

  if (!bank.empty()) {
    check_bank(bank, batch);
    const Tensor f_j = bank[batch.domain_j].extract(images);
    const Tensor f_k = bank[batch.domain_k].extract(images);
    Cache cache_j, cache_k;
    const Tensor v_j = model.encoder.encode(f_j, Mode::kTrain, &cache_j);
    const Tensor v_k = model.encoder.encode(f_k, Mode::kTrain, &cache_k);
    LossAndGrad tri =
        batch_hard_triplet_loss_with_grad(v_j, batch.global_labels, w.margin);
    ConsistencyGrad con = consistency_loss_with_grad(v_j, v_k);
    out.losses.triplet = tri.value;
    out.losses.consistency = con.value;

    const bool use_tri = terms.triplet && w.triplet != 0.0;
    const bool use_con = terms.consistency && w.consistency != 0.0;
    if (use_tri || use_con) {
      Tensor grad_j(v_j.shape(), 0.0);
      if (use_tri) {
        scale(tri.grad, w.triplet);
        grad_j += tri.grad;
      }
      if (use_con) {
        scale(con.grad_j, w.consistency);
        grad_j += con.grad_j;
      }
      model.encoder.backward(grad_j, cache_j);
      if (use_con) {
        scale(con.grad_k, w.consistency);
        model.encoder.backward(con.grad_k, cache_k);
      }
    }
  } else if (wants_frozen_paths(config, terms)) {
    throw ConfigError(
        "triplet/consistency weights are non-zero but no frozen extractors were given");
  }

  out.losses.total =
      total_loss(out.losses.cls, out.losses.triplet, out.losses.consistency, w);

  if (terms.cls) {
    const Tensor dv = model.classifier.backward(cls.grad, classifier_cache);
    const Tensor df = model.encoder.backward(dv, out.encoder_cache);
    model.extractor.backward(df, out.extractor_cache);
  }
  return out;
}

EpisodeLosses episodic_loss_value(const EpisodicModel& model,
                                  const std::vector<FrozenExtractor>& bank,
                                  const EpisodeBatch& batch, const Tensor& images,
                                  const TrainConfig& config) {
  const LossWeights& w = config.weights;
  EpisodeLosses out;
  const Tensor v =
      model.encoder.encode(model.extractor.extract(images, Mode::kTrain), Mode::kTrain);
  out.cls = smoothed_cross_entropy_with_logits(model.classifier.logits(v),
                                               batch.global_labels, w.smoothing,
                                               config.smoothing_variant)
                .value;
  if (!bank.empty()) {
    check_bank(bank, batch);
    const Tensor v_j =
        model.encoder.encode(bank[batch.domain_j].extract(images), Mode::kTrain);
    const Tensor v_k =
        model.encoder.encode(bank[batch.domain_k].extract(images), Mode::kTrain);
    out.triplet = batch_hard_triplet_loss(v_j, batch.global_labels, w.margin);
    out.consistency = consistency_loss(v_j, v_k);
  }
  out.total = total_loss(out.cls, out.triplet, out.consistency, w);
  return out;
}

namespace {

std::string describe_batch(const EpisodeBatch& batch) {
  std::ostringstream os;
  os << "domains (" << batch.domain_i << ", " << batch.domain_j << ", "
     << batch.domain_k << "), samples [";
  for (std::size_t n = 0; n < batch.samples.size(); ++n) {
    if (n) os << ' ';
    os << batch.samples[n].domain << ':' << batch.samples[n].sample;
  }
  os << ']';
  return os.str();
}

StepMetrics apply_step(TrainState& state, const EpisodeBatch& batch, const Tensor& images,
                       const TrainConfig& config, double learning_rate,
                       const std::vector<FrozenExtractor>& bank) {
  auto params = state.model.parameters();
  zero_grad(params);
  const EpisodeForward fwd =
      episodic_objective(state.model, bank, batch, images, config);
  const EpisodeLosses& l = fwd.losses;
  if (!std::isfinite(l.total)) {
    throw NumericError("non-finite loss (cls " + std::to_string(l.cls) + ", tri " +
                       std::to_string(l.triplet) + ", consis " +
                       std::to_string(l.consistency) + ") on batch " +
                       describe_batch(batch));
  }
  state.model.extractor.commit_statistics(fwd.extractor_cache, config.bn_momentum);
  state.model.encoder.commit_statistics(fwd.encoder_cache, config.bn_momentum);
  state.optimizer.step(params, learning_rate);

  StepMetrics m;
  m.learning_rate = learning_rate;
  m.cls = l.cls;
  m.triplet = l.triplet;
  m.consistency = l.consistency;
  m.total = l.total;
  m.domain_i = batch.domain_i;
  m.domain_j = batch.domain_j;
  m.domain_k = batch.domain_k;
  return m;
}

}  // namespace

StepMetrics episodic_step(TrainState& state, const EpisodeBatch& batch,
                          const Tensor& images, const TrainConfig& config,
                          double learning_rate) {
  return apply_step(state, batch, images, config, learning_rate, state.bank);
}

StepMetrics classification_step(TrainState& state, const EpisodeBatch& batch,
                                const Tensor& images, const TrainConfig& config,
                                double learning_rate) {
  TrainConfig cls_only = config;
  cls_only.weights.triplet = 0.0;
  cls_only.weights.consistency = 0.0;
  static const std::vector<FrozenExtractor> kNoBank;
  return apply_step(state, batch, images, cls_only, learning_rate, kNoBank);
}

std::size_t iterations_per_epoch(const SourceCollection& collection,
                                 const TrainConfig& config) {
  const std::size_t bs = config.batch_size();
  return (collection.total_images() + bs - 1) / bs;
}

// ------------------------------------------------------------ logging

std::string format_metrics(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(6);
  os << "epoch " << m.epoch << " iter " << m.iteration << " lr " << m.learning_rate
     << " domains " << m.domain_i << '/' << m.domain_j << '/' << m.domain_k << " cls "
     << m.cls << " tri " << m.triplet << " consis " << m.consistency << " total "
     << m.total;
  return os.str();
}

nlohmann::json metrics_to_json(const StepMetrics& m) {
  return {{"iteration", m.iteration},
          {"epoch", m.epoch},
          {"lr", m.learning_rate},
          {"cls", m.cls},
          {"tri", m.triplet},
          {"consis", m.consistency},
          {"total", m.total},
          {"domains", {m.domain_i, m.domain_j, m.domain_k}}};
}

namespace {

StepMetrics metrics_from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.iteration = j.at("iteration").get<std::size_t>();
  m.epoch = j.at("epoch").get<int>();
  m.learning_rate = j.at("lr").get<double>();
  m.cls = j.at("cls").get<double>();
  m.triplet = j.at("tri").get<double>();
  m.consistency = j.at("consis").get<double>();
  m.total = j.at("total").get<double>();
  const auto& d = j.at("domains");
  m.domain_i = d.at(0).get<std::size_t>();
  m.domain_j = d.at(1).get<std::size_t>();
  m.domain_k = d.at(2).get<std::size_t>();
  return m;
}

void write_logs(const fs::path& dir, const std::vector<StepMetrics>& log,
                std::size_t from, bool truncate) {
  const auto mode = truncate ? std::ios::trunc : std::ios::app;
  std::ofstream jsonl(dir / "train_log.jsonl", std::ios::out | mode);
  std::ofstream text(dir / "train_log.txt", std::ios::out | mode);
  if (!jsonl || !text) throw CheckpointError("cannot write training log in " + dir.string());
  for (std::size_t n = from; n < log.size(); ++n) {
    jsonl << metrics_to_json(log[n]).dump() << '\n';
    text << format_metrics(log[n]) << '\n';
  }
}

std::vector<StepMetrics> read_log(const fs::path& path, int up_to_epoch) {
  std::vector<StepMetrics> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StepMetrics m = metrics_from_json(nlohmann::json::parse(line));
    if (m.epoch <= up_to_epoch) out.push_back(m);
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------ training loop

TrainResult train(const SourceCollection& collection, std::vector<FrozenExtractor> bank,
                  const ModelConfig& model_config, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  const bool episodic = options.variant == TrainVariant::kEpisodic;
  if (episodic) {
    if (bank.size() != collection.domains.size()) {
      throw CheckpointError("expected " + std::to_string(collection.domains.size()) +
                            " frozen extractors, got " + std::to_string(bank.size()));
    }
    for (const auto& f : bank) {
      if (f.feature_dim() != model_config.global_backbone.feature_dim) {
        throw CheckpointError("frozen extractor feature size " +
                              std::to_string(f.feature_dim()) + " does not match " +
                              std::to_string(model_config.global_backbone.feature_dim));
      }
    }
  } else {
    bank.clear();
  }
  TrainConfig effective = config;
  if (!episodic) {
    effective.weights.triplet = 0.0;
    effective.weights.consistency = 0.0;
  }

  TrainResult result{TrainState(model_config, collection.label_map.total_identities,
                                effective, std::move(bank)),
                     {},
                     {}};
  TrainState& state = result.state;
  const std::string stage = episodic ? "episodic" : "baseline";
  const bool persist = !options.output_dir.empty();
  if (persist) fs::create_directories(options.output_dir);

  if (options.resume_from) {
    const Checkpoint ckpt = load_checkpoint(*options.resume_from);
    CheckpointMeta expected;
    expected.backbone = to_string(model_config.global_backbone.kind);
    expected.feature_dim = model_config.global_backbone.feature_dim;
    expected.embedding_dim = model_config.embedding_dim;
    expected.total_identities = collection.label_map.total_identities;
    expected.stage = stage;
    require_compatible(ckpt.meta, expected);
    restore_train_state(state, ckpt);
    if (persist) {
      result.log = read_log(options.output_dir / "train_log.jsonl", state.epoch);
      write_logs(options.output_dir, result.log, 0, true);
    }
    if (options.on_message) {
      options.on_message("resumed from " + options.resume_from->string() + " at epoch " +
                         std::to_string(state.epoch));
    }
  } else if (persist) {
    write_logs(options.output_dir, {}, 0, true);
  }
  for (int e = 1; e <= state.epoch; ++e) {
    result.epoch_learning_rates.push_back(learning_rate_at(effective, e));
  }

  const std::size_t iters = iterations_per_epoch(collection, effective);
  const std::size_t p = effective.identities_per_batch, k = effective.images_per_identity;
  const auto& gb = model_config.global_backbone;

  bool replacement_logged = false;
  for (int epoch = state.epoch + 1; epoch <= effective.epochs; ++epoch) {
    const double lr = learning_rate_at(effective, epoch);
    result.epoch_learning_rates.push_back(lr);
    const std::size_t log_start = result.log.size();
    const auto e = static_cast<std::uint64_t>(epoch);
    for (std::size_t it = 0; it < iters; ++it) {
      Rng rng = make_rng(effective.seed, {kEpisodeSample, e, it});
      const EpisodeBatch batch = episodic ? sample_episode(collection, p, k, rng)
                                          : sample_single_domain(collection, p, k, rng);
      if (batch.sampled_with_replacement && !replacement_logged && options.on_message) {
        options.on_message("note: identities with fewer than K images are sampled with "
                           "replacement");
        replacement_logged = true;
      }
      const Tensor images =
          load_batch(collection.domains, batch.samples, effective,
                     derive_seed(effective.seed, {kEpisodeAugment, e, it}),
                     effective.augment, gb.input_height, gb.input_width);
      StepMetrics m = episodic ? episodic_step(state, batch, images, effective, lr)
                               : classification_step(state, batch, images, effective, lr);
      m.iteration = ++state.iteration;
      m.epoch = epoch;
      result.log.push_back(m);
      if (options.on_step) options.on_step(m);
    }
    state.epoch = epoch;
    if (persist) {
      write_logs(options.output_dir, result.log, log_start, false);
      save_checkpoint(options.output_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"),
                      make_train_checkpoint(state, model_config, effective, stage));
    }
    if (options.on_message) {
      double sum = 0.0;
      for (std::size_t n = log_start; n < result.log.size(); ++n) sum += result.log[n].total;
      std::ostringstream os;
      os << stage << " epoch " << epoch << "/" << effective.epochs << " lr " << lr
         << " mean total loss " << sum / static_cast<double>(result.log.size() - log_start);
      options.on_message(os.str());
    }
    if (options.stop_after_epoch && *options.stop_after_epoch == epoch) return result;
  }
  if (persist) {
    save_checkpoint(options.output_dir / "final.ckpt",
                    make_train_checkpoint(state, model_config, effective, stage));
  }
  return result;
}

// ------------------------------------------------------------ checkpoints

Checkpoint make_extractor_checkpoint(const FeatureExtractor& extractor,
                                     const std::string& stage, int epoch,
                                     std::uint64_t seed, int domain_id) {
  Checkpoint c;
  c.meta.backbone = to_string(extractor.config().kind);
  c.meta.feature_dim = extractor.feature_dim();
  c.meta.stage = stage;
  c.meta.epoch = epoch;
  c.meta.seed = seed;
  c.meta.extra["domain_id"] = domain_id;
  c.meta.extra["instance_norm"] = extractor.config().instance_norm;
  c.tensors = extractor.state();
  return c;
}

FeatureExtractor extractor_from_checkpoint(const Checkpoint& ckpt,
                                           const BackboneConfig& backbone) {
  CheckpointMeta expected;
  expected.backbone = to_string(backbone.kind);
  expected.feature_dim = backbone.feature_dim;
  require_compatible(ckpt.meta, expected);
  FeatureExtractor f(backbone, ckpt.meta.seed);
  f.load_state(ckpt.tensors);
  return f;
}

Checkpoint make_train_checkpoint(const TrainState& state, const ModelConfig& model_config,
                                 const TrainConfig& config, const std::string& stage) {
  Checkpoint c;
  c.meta.backbone = to_string(model_config.global_backbone.kind);
  c.meta.feature_dim = model_config.global_backbone.feature_dim;
  c.meta.embedding_dim = model_config.embedding_dim;
  c.meta.total_identities = state.model.classifier.num_classes();
  c.meta.stage = stage;
  c.meta.epoch = state.epoch;
  c.meta.seed = config.seed;
  c.meta.extra = {{"iteration", state.iteration},
                  {"epochs", config.epochs},
                  {"lr_drop_epoch", config.lr_drop_epoch},
                  {"lambda_tri", config.weights.triplet},
                  {"lambda_consis", config.weights.consistency},
                  {"margin", config.weights.margin},
                  {"smoothing", config.weights.smoothing}};
  c.tensors = state.model.state();
  merge_prefixed(c.tensors, state.optimizer.buffers(), "opt.");
  return c;
}

void restore_train_state(TrainState& state, const Checkpoint& ckpt) {
  state.model.load_state(ckpt.tensors);
  state.optimizer.buffers() = with_prefix(ckpt.tensors, "opt.");
  state.epoch = ckpt.meta.epoch;
  state.iteration = ckpt.meta.extra.value("iteration", std::size_t{0});
}

}  // namespace dgreid
