#pragma once

// Training objectives: cross-domain consistency, batch-hard triplet loss,
// label-smoothed cross-entropy and their weighted total. All losses are
// means over the batch. Each has a value-only form and a form returning the
// gradient with respect to its embedding / logit inputs.

#include <cstddef>
#include <span>
#include <vector>

#include "dgreid/tensor.hpp"

namespace dgreid {

using Label = std::size_t;

struct LossWeights {
  double triplet = 0.2;       // lambda_tri
  double consistency = 0.01;  // lambda_consis
  double margin = 0.3;
  double smoothing = 0.1;

  void validate() const;
};

enum class SmoothingVariant {
  kOffClass,  // eps / (C - 1) on every wrong class, 1 - eps on the true one
  kUniform,   // eps / C everywhere plus 1 - eps on the true class
};

struct LossAndGrad {
  double value = 0.0;
  Tensor grad;
};

// Mean over rows of ||v_j - v_k||_2.
double consistency_loss(const Tensor& v_j, const Tensor& v_k);

struct ConsistencyGrad {
  double value = 0.0;
  Tensor grad_j;
  Tensor grad_k;
};
ConsistencyGrad consistency_loss_with_grad(const Tensor& v_j, const Tensor& v_k);

struct PairDistances {
  double positive = 0.0;
  double negative = 0.0;
};
PairDistances pair_distances(std::span<const double> anchor,
                             std::span<const double> positive,
                             std::span<const double> negative);

struct HardTriplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;  // farthest same-label row
  std::size_t negative = 0;  // nearest different-label row
  double d_pos = 0.0;
  double d_neg = 0.0;
};

// Throws std::invalid_argument if a label occurs once or only one label is
// present. Ties resolve to the lowest row index.
std::vector<HardTriplet> mine_batch_hard(const Tensor& embeddings,
                                         std::span<const Label> labels);

double batch_hard_triplet_loss(const Tensor& embeddings,
                               std::span<const Label> labels, double margin);
LossAndGrad batch_hard_triplet_loss_with_grad(const Tensor& embeddings,
                                              std::span<const Label> labels,
                                              double margin);

inline constexpr double kProbabilityFloor = 1e-12;

// Smoothed cross-entropy on a (rows, classes) probability matrix.
double smoothed_cross_entropy(const Tensor& probabilities,
                              std::span<const Label> labels, double smoothing,
                              SmoothingVariant variant = SmoothingVariant::kOffClass,
                              double floor = kProbabilityFloor);

// Same objective evaluated from logits through a numerically stable
// log-softmax; the gradient is with respect to the logits.
LossAndGrad smoothed_cross_entropy_with_logits(
    const Tensor& logits, std::span<const Label> labels, double smoothing,
    SmoothingVariant variant = SmoothingVariant::kOffClass,
    double floor = kProbabilityFloor);

// L_cls + lambda_tri * L_tri + lambda_consis * L_consis.
double total_loss(double cls, double triplet, double consistency,
                  const LossWeights& weights);

}  // namespace dgreid
