#pragma once

// Single-shot re-identification evaluation: embed the target domain with
// F -> E, rank gallery by Euclidean distance for every probe and report the
// cumulative matching characteristic averaged over random splits.

#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"
#include "dgreid/data.hpp"
#include "dgreid/trainer.hpp"

namespace dgreid {

struct EmbeddingMatrix {
  Tensor values;               // (rows, dim)
  std::vector<Label> ids;
  std::vector<int> cameras;
};

// Maps a preprocessed image batch to embeddings (rows, dim).
using EmbedFn = std::function<Tensor(const Tensor& images)>;

// Embeds every sample of `dataset` in inference mode, `batch_size` images at a
// time. Throws NumericError naming the image when an embedding is not finite.
EmbeddingMatrix embed_dataset(const DomainDataset& dataset, const EmbedFn& embed,
                              const Normalization& norm, std::size_t height,
                              std::size_t width, std::size_t batch_size = 64);

// F -> E in inference mode.
EmbedFn model_embedder(const EpisodicModel& model);

// Gallery indices ordered by distance to `probe`; equal distances keep
// gallery order.
std::vector<std::size_t> rank_gallery(std::span<const double> probe,
                                      const Tensor& gallery);

// CMC curve (length `max_rank`, 0 = gallery size) for one probe/gallery split: entry r is the
// fraction of probes whose first true match appears at rank <= r + 1.
// Throws DataError when a probe identity has no gallery match. When
// `cross_camera` is set, same-camera gallery images of the probe identity
// are ignored. `mean_average_precision` (optional) receives the mean AP.
std::vector<double> compute_cmc(const EmbeddingMatrix& embeddings, const SplitSpec& split,
                                std::size_t max_rank, bool cross_camera = false,
                                double* mean_average_precision = nullptr);

struct CMCResult {
  std::vector<double> curve;             // mean over splits
  std::vector<double> per_split_rank1;
  std::vector<double> per_split_map;
  std::vector<std::uint64_t> split_seeds;
  double mean_rank1 = 0.0;
  double std_rank1 = 0.0;
  double mean_map = 0.0;
  std::size_t probes = 0;
  std::size_t gallery = 0;

  nlohmann::json to_json() const;
};

// Split seeds are derive_seed(seed, {split}).
CMCResult evaluate_embeddings(const EmbeddingMatrix& embeddings,
                              const DomainDataset& dataset, const SplitProtocol& protocol,
                              std::size_t num_splits, std::uint64_t seed,
                              std::size_t max_rank = 0);

CMCResult evaluate_target(const EpisodicModel& model, const DomainDataset& dataset,
                          const SplitProtocol& protocol, const Normalization& norm,
                          std::size_t num_splits, std::uint64_t seed,
                          std::size_t max_rank = 0);

}  // namespace dgreid
