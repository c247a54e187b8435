#include "dgreid/losses.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "dgreid/kernels.hpp"

namespace dgreid {

void LossWeights::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(triplet) || triplet < 0.0) {
    throw std::invalid_argument("loss weights: lambda_tri must be finite and >= 0");
  }
  if (!finite(consistency) || consistency < 0.0) {
    throw std::invalid_argument("loss weights: lambda_consis must be finite and >= 0");
  }
  if (!finite(margin) || margin <= 0.0) {
    throw std::invalid_argument("loss weights: margin must be finite and > 0");
  }
  if (!finite(smoothing) || smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("loss weights: smoothing must lie in [0, 1)");
  }
}

namespace {

double row_distance(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

void check_embeddings(const Tensor& embeddings, std::size_t labels, const char* who) {
  if (embeddings.rank() != 2) {
    throw std::invalid_argument(std::string(who) + ": expected (rows, dim) embeddings");
  }
  if (embeddings.dim(0) != labels) {
    throw std::invalid_argument(std::string(who) + ": " +
                                std::to_string(embeddings.dim(0)) + " rows but " +
                                std::to_string(labels) + " labels");
  }
}

// Per-row smoothed target mass: (true class, every other class).
std::pair<double, double> target_mass(std::size_t classes, double smoothing,
                                      SmoothingVariant variant) {
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("cross-entropy: smoothing must lie in [0, 1)");
  }
  if (classes == 1) {
    if (smoothing > 0.0) {
      throw std::invalid_argument(
          "cross-entropy: label smoothing needs at least two classes");
    }
    return {1.0, 0.0};
  }
  const auto c = static_cast<double>(classes);
  if (variant == SmoothingVariant::kOffClass) {
    return {1.0 - smoothing, smoothing / (c - 1.0)};
  }
  return {1.0 - smoothing + smoothing / c, smoothing / c};
}

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw std::invalid_argument("cross-entropy: " + std::to_string(rows) +
                                " rows but " + std::to_string(labels.size()) +
                                " labels");
  }
  for (Label y : labels) {
    if (y >= classes) {
      throw std::invalid_argument("cross-entropy: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(classes) +
                                  " classes");
    }
  }
}

}  // namespace

double consistency_loss(const Tensor& v_j, const Tensor& v_k) {
  return consistency_loss_with_grad(v_j, v_k).value;
}

ConsistencyGrad consistency_loss_with_grad(const Tensor& v_j, const Tensor& v_k) {
  if (v_j.rank() != 2 || !v_j.same_shape(v_k)) {
    throw std::invalid_argument("consistency_loss: shape mismatch " +
                                v_j.shape_string() + " vs " + v_k.shape_string());
  }
  const std::size_t rows = v_j.dim(0), d = v_j.dim(1);
  ConsistencyGrad out{0.0, Tensor(v_j.shape()), Tensor(v_k.shape())};
  if (rows == 0) return out;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = v_j.data() + r * d;
    const double* b = v_k.data() + r * d;
    const double dist = row_distance(a, b, d);
    sum += dist;
    if (dist > 0.0) {
      for (std::size_t k = 0; k < d; ++k) {
        const double g = (a[k] - b[k]) / dist * inv_rows;
        out.grad_j[r * d + k] = g;
        out.grad_k[r * d + k] = -g;
      }
    }
  }
  out.value = sum * inv_rows;
  return out;
}

PairDistances pair_distances(std::span<const double> anchor,
                             std::span<const double> positive,
                             std::span<const double> negative) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw std::invalid_argument("pair_distances: dimension mismatch");
  }
  return {row_distance(anchor.data(), positive.data(), anchor.size()),
          row_distance(anchor.data(), negative.data(), anchor.size())};
}

std::vector<HardTriplet> mine_batch_hard(const Tensor& embeddings,
                                         std::span<const Label> labels) {
  check_embeddings(embeddings, labels.size(), "batch_hard_triplet_loss");
  std::map<Label, std::size_t> counts;
  for (Label y : labels) ++counts[y];
  if (counts.size() < 2) {
    throw std::invalid_argument(
        "batch_hard_triplet_loss: batch needs at least two distinct labels");
  }
  for (const auto& [label, n] : counts) {
    if (n < 2) {
      throw std::invalid_argument("batch_hard_triplet_loss: label " +
                                  std::to_string(label) +
                                  " has a single instance; no positive to mine");
    }
  }

  const Tensor dist = kernels::pairwise_distances(embeddings, embeddings);
  const std::size_t n = labels.size();
  std::vector<HardTriplet> out(n);
  for (std::size_t a = 0; a < n; ++a) {
    HardTriplet t;
    t.anchor = a;
    bool have_pos = false, have_neg = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist.at(a, j);
      if (labels[j] == labels[a]) {
        if (!have_pos || d > t.d_pos) {
          t.d_pos = d;
          t.positive = j;
          have_pos = true;
        }
      } else if (!have_neg || d < t.d_neg) {
        t.d_neg = d;
        t.negative = j;
        have_neg = true;
      }
    }
    out[a] = t;
  }
  return out;
}

double batch_hard_triplet_loss(const Tensor& embeddings,
                               std::span<const Label> labels, double margin) {
  return batch_hard_triplet_loss_with_grad(embeddings, labels, margin).value;
}

LossAndGrad batch_hard_triplet_loss_with_grad(const Tensor& embeddings,
                                              std::span<const Label> labels,
                                              double margin) {
  const auto triplets = mine_batch_hard(embeddings, labels);
  const std::size_t n = labels.size(), d = embeddings.dim(1);
  const double inv_n = 1.0 / static_cast<double>(n);
  LossAndGrad out{0.0, Tensor(embeddings.shape())};
  double sum = 0.0;
  for (const HardTriplet& t : triplets) {
    const double hinge = margin + t.d_pos - t.d_neg;
    if (hinge <= 0.0) continue;
    sum += hinge;
    const double* va = embeddings.data() + t.anchor * d;
    const double* vp = embeddings.data() + t.positive * d;
    const double* vn = embeddings.data() + t.negative * d;
    double* ga = out.grad.data() + t.anchor * d;
    double* gp = out.grad.data() + t.positive * d;
    double* gn = out.grad.data() + t.negative * d;
    for (std::size_t k = 0; k < d; ++k) {
      if (t.d_pos > 0.0) {
        const double g = (va[k] - vp[k]) / t.d_pos * inv_n;
        ga[k] += g;
        gp[k] -= g;
      }
      if (t.d_neg > 0.0) {
        const double g = (va[k] - vn[k]) / t.d_neg * inv_n;
        ga[k] -= g;
        gn[k] += g;
      }
    }
  }
  out.value = sum * inv_n;
  return out;
}

double smoothed_cross_entropy(const Tensor& probabilities,
                              std::span<const Label> labels, double smoothing,
                              SmoothingVariant variant, double floor) {
  if (probabilities.rank() != 2) {
    throw std::invalid_argument("cross-entropy: expected (rows, classes) input");
  }
  const std::size_t rows = probabilities.dim(0), classes = probabilities.dim(1);
  check_labels(labels, rows, classes);
  const auto [on, off] = target_mass(classes, smoothing, variant);
  if (rows == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double t = c == labels[r] ? on : off;
      if (t == 0.0) continue;
      row -= t * std::log(std::max(probabilities.at(r, c), floor));
    }
    sum += row;
  }
  return sum / static_cast<double>(rows);
}

LossAndGrad smoothed_cross_entropy_with_logits(const Tensor& logits,
                                               std::span<const Label> labels,
                                               double smoothing,
                                               SmoothingVariant variant,
                                               double floor) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross-entropy: expected (rows, classes) logits");
  }
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  check_labels(labels, rows, classes);
  const auto [on, off] = target_mass(classes, smoothing, variant);
  LossAndGrad out{0.0, Tensor(logits.shape())};
  if (rows == 0) return out;
  const double log_floor = std::log(floor);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<double> logp(classes);
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - zmax);
    const double lse = zmax + std::log(s);
    // Clamped entries contribute a constant, so their gradient vanishes.
    double unclamped_mass = 0.0;
    double row = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double t = c == labels[r] ? on : off;
      const double lp = z[c] - lse;
      const bool clamped = lp < log_floor;
      logp[c] = clamped ? log_floor : lp;
      if (t != 0.0) row -= t * logp[c];
      if (!clamped) unclamped_mass += t;
    }
    sum += row;
    double* g = out.grad.data() + r * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      const double t = c == labels[r] ? on : off;
      const double p = std::exp(z[c] - lse);
      const bool clamped = logp[c] == log_floor && z[c] - lse < log_floor;
      g[c] = (p * unclamped_mass - (clamped ? 0.0 : t)) * inv_rows;
    }
  }
  out.value = sum * inv_rows;
  return out;
}

double total_loss(double cls, double triplet, double consistency,
                  const LossWeights& weights) {
  if (cls < 0.0 || triplet < 0.0 || consistency < 0.0) {
    throw std::invalid_argument("total_loss: component losses must be nonnegative");
  }
  return cls + weights.triplet * triplet + weights.consistency * consistency;
}

}  // namespace dgreid
