#pragma once

// Shared helpers for the unit tests: random tensors, finite differences,
// scratch directories and tiny model configurations.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dgreid/layers.hpp"
#include "dgreid/rng.hpp"
#include "dgreid/tensor.hpp"
#include "dgreid/trainer.hpp"

namespace testing {

inline dgreid::Tensor random_tensor(std::vector<std::size_t> shape, dgreid::Rng& rng,
                                    double scale = 1.0) {
  dgreid::Tensor t(std::move(shape));
  for (double& v : t.values()) v = dgreid::normal(rng, 0.0, scale);
  return t;
}

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of f with respect to every entry of `x`.
inline dgreid::Tensor numeric_gradient(const std::function<double()>& f, dgreid::Tensor& x,
                                       double h = 1e-6) {
  dgreid::Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const dgreid::Tensor& analytic, const dgreid::Tensor& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dgreid_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Down-scaled backbone used by gradient checks: 16x8 input, no stem pooling,
// widths 4/4/4, 8 output features.
inline dgreid::BackboneConfig micro_backbone(bool instance_norm) {
  dgreid::BackboneConfig b = dgreid::BackboneConfig::tiny(8);
  b.input_height = 16;
  b.input_width = 8;
  b.stem_pool = 1;
  b.widths = {4, 4, 4};
  b.instance_norm = instance_norm;
  return b;
}

inline dgreid::ModelConfig micro_model() {
  dgreid::ModelConfig m;
  m.global_backbone = micro_backbone(true);
  m.domain_backbone = micro_backbone(false);
  m.embedding_dim = 4;
  return m;
}

// Small backbone for fast training tests on 64x32 images.
inline dgreid::ModelConfig small_model() {
  dgreid::ModelConfig m = dgreid::ModelConfig::tiny();
  for (auto* b : {&m.global_backbone, &m.domain_backbone}) {
    b->input_height = 64;
    b->input_width = 32;
    b->stem_pool = 2;
    b->widths = {8, 16, 16};
    b->feature_dim = 16;
  }
  m.embedding_dim = 8;
  return m;
}

// Random P x K style labels: every label at least twice, at least 2 labels.
inline std::vector<dgreid::Label> random_labels(std::size_t n, dgreid::Rng& rng) {
  const std::size_t max_labels = n / 2;
  const std::size_t labels = 2 + dgreid::uniform_index(rng, max_labels - 1);
  std::vector<dgreid::Label> y;
  for (std::size_t l = 0; l < labels; ++l) y.insert(y.end(), {l, l});
  while (y.size() < n) y.push_back(dgreid::uniform_index(rng, labels));
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

inline dgreid::Tensor random_probabilities(std::size_t rows, std::size_t classes, dgreid::Rng& rng) {
  dgreid::Tensor p({rows, classes});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < classes; ++k) s += (p.at(r, k) = dgreid::uniform01(rng) + 1e-3);
    for (std::size_t k = 0; k < classes; ++k) p.at(r, k) /= s;
  }
  return p;
}

}  // namespace testing
