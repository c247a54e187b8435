#include "dgreid/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dgreid/errors.hpp"

namespace dgreid {

EmbeddingMatrix embed_dataset(const DomainDataset& dataset, const EmbedFn& embed,
                              const Normalization& norm, std::size_t height,
                              std::size_t width, std::size_t batch_size) {
  EmbeddingMatrix out;
  const std::size_t n = dataset.num_images();
  for (const auto& s : dataset.samples) {
    out.ids.push_back(s.identity);
    out.cameras.push_back(s.camera);
  }
  TrainConfig load_config;
  load_config.normalization = norm;
  std::span<const DomainDataset> one(&dataset, 1);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<SampleRef> refs;
    for (std::size_t i = start; i < stop; ++i) refs.push_back({0, i});
    const Tensor emb = embed(load_batch(one, refs, load_config, 0, false, height, width));
    if (out.values.empty()) out.values = Tensor({n, emb.dim(1)});
    for (std::size_t r = 0; r < emb.dim(0); ++r) {
      const auto src = emb.row(r);
      for (double v : src) {
        if (!std::isfinite(v)) {
          const auto& s = dataset.samples[start + r];
          throw NumericError("non-finite embedding for image " +
                             (s.path.empty() ? "#" + std::to_string(start + r)
                                             : s.path.string()));
        }
      }
      std::copy(src.begin(), src.end(), out.values.row(start + r).begin());
    }
  }
  return out;
}

EmbedFn model_embedder(const EpisodicModel& model) {
  return [&model](const Tensor& images) {
    return model.encoder.encode(model.extractor.extract(images));
  };
}

std::vector<std::size_t> rank_gallery(std::span<const double> probe,
                                      const Tensor& gallery) {
  if (gallery.rank() != 2 || gallery.dim(1) != probe.size()) {
    throw std::invalid_argument("rank_gallery: probe has " + std::to_string(probe.size()) +
                                " dims, gallery is " + gallery.shape_string());
  }
  const std::size_t g = gallery.dim(0);
  std::vector<double> dist(g);
  for (std::size_t i = 0; i < g; ++i) {
    const auto row = gallery.row(i);
    double s = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) {
      const double diff = probe[d] - row[d];
      s += diff * diff;
    }
    dist[i] = std::sqrt(s);
  }
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

std::vector<double> compute_cmc(const EmbeddingMatrix& embeddings, const SplitSpec& split,
                                std::size_t max_rank, bool cross_camera,
                                double* mean_average_precision) {
  if (split.probe.empty()) throw DataError("evaluation: empty probe set");
  std::vector<std::size_t> gallery_rows;
  for (const auto& e : split.gallery) gallery_rows.push_back(e.index);
  const Tensor gallery = gather_rows(embeddings.values, gallery_rows);

  const std::size_t np = split.probe.size();
  std::vector<std::size_t> first_hit(np, 0);
  std::vector<double> ap(np, 0.0);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t q = 0; q < np; ++q) {
    const SplitEntry& p = split.probe[q];
    const int cam = embeddings.cameras[p.index];
    const auto order = rank_gallery(embeddings.values.row(p.index), gallery);
    std::size_t rank = 0, hits = 0;
    double precision_sum = 0.0;
    for (std::size_t g : order) {
      const SplitEntry& e = split.gallery[g];
      const bool same_id = e.identity == p.identity;
      if (cross_camera && same_id && embeddings.cameras[e.index] == cam) continue;
      ++rank;
      if (same_id) {
        ++hits;
        if (hits == 1) first_hit[q] = rank;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    if (hits == 0) {
#pragma omp critical(cmc_error)
      if (error.empty()) {
        error = "evaluation: probe identity " + std::to_string(p.identity) +
                " has no match in the gallery";
      }
    } else {
      ap[q] = precision_sum / static_cast<double>(hits);
    }
  }
  if (!error.empty()) throw DataError(error);

  if (max_rank == 0) max_rank = split.gallery.size();
  std::vector<double> curve(max_rank, 0.0);
  for (std::size_t q = 0; q < np; ++q) {
    for (std::size_t r = first_hit[q] - 1; r < max_rank; ++r) curve[r] += 1.0;
  }
  for (double& c : curve) c /= static_cast<double>(np);
  if (mean_average_precision) {
    *mean_average_precision =
        std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(np);
  }
  return curve;
}

nlohmann::json CMCResult::to_json() const {
  return {{"cmc", curve},
          {"rank1", mean_rank1},
          {"rank1_std", std_rank1},
          {"per_split_rank1", per_split_rank1},
          {"map", mean_map},
          {"per_split_map", per_split_map},
          {"split_seeds", split_seeds},
          {"probes", probes},
          {"gallery", gallery}};
}

CMCResult evaluate_embeddings(const EmbeddingMatrix& embeddings,
                              const DomainDataset& dataset, const SplitProtocol& protocol,
                              std::size_t num_splits, std::uint64_t seed,
                              std::size_t max_rank) {
  if (num_splits == 0) throw ConfigError("evaluation needs at least one split");
  CMCResult result;
  for (std::size_t s = 0; s < num_splits; ++s) {
    const std::uint64_t split_seed = derive_seed(seed, {s});
    const SplitSpec split = make_single_shot_split(dataset, protocol, split_seed);
    double map = 0.0;
    const auto curve = compute_cmc(embeddings, split, max_rank, protocol.cross_camera, &map);
    if (result.curve.empty()) result.curve.assign(curve.size(), 0.0);
    for (std::size_t r = 0; r < curve.size(); ++r) result.curve[r] += curve[r];
    result.per_split_rank1.push_back(curve[0]);
    result.per_split_map.push_back(map);
    result.split_seeds.push_back(split_seed);
    result.probes = split.probe.size();
    result.gallery = split.gallery.size();
  }
  const double n = static_cast<double>(num_splits);
  for (double& c : result.curve) c /= n;
  result.mean_rank1 = result.curve[0];
  double var = 0.0;
  for (double r : result.per_split_rank1) {
    var += (r - result.mean_rank1) * (r - result.mean_rank1);
  }
  result.std_rank1 = num_splits > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  result.mean_map =
      std::accumulate(result.per_split_map.begin(), result.per_split_map.end(), 0.0) / n;
  return result;
}

CMCResult evaluate_target(const EpisodicModel& model, const DomainDataset& dataset,
                          const SplitProtocol& protocol, const Normalization& norm,
                          std::size_t num_splits, std::uint64_t seed,
                          std::size_t max_rank) {
  const auto& cfg = model.extractor.config();
  const EmbeddingMatrix emb = embed_dataset(dataset, model_embedder(model), norm,
                                            cfg.input_height, cfg.input_width);
  return evaluate_embeddings(emb, dataset, protocol, num_splits, seed, max_rank);
}

}  // namespace dgreid
