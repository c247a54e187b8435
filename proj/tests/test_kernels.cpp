#include <cmath>

#include "doctest.h"
#include "dgreid/kernels.hpp"
#include "support.hpp"

using namespace dgreid;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

struct ConvCase {
  std::size_t n, c_in, c_out, h, w, k, stride, pad;
};

}  // namespace

TEST_CASE("parallel conv2d matches the direct-loop reference") {
  Rng rng(1);
  const ConvCase cases[] = {
      {2, 3, 4, 8, 6, 3, 1, 1}, {1, 1, 1, 5, 5, 1, 1, 0}, {3, 2, 5, 9, 7, 3, 2, 1},
      {2, 4, 3, 7, 7, 7, 2, 3}, {1, 3, 2, 4, 4, 3, 1, 0},
  };
  for (const auto& c : cases) {
    Tensor x = testing::random_tensor({c.n, c.c_in, c.h, c.w}, rng);
    Tensor w = testing::random_tensor({c.c_out, c.c_in, c.k, c.k}, rng);
    Tensor b = testing::random_tensor({c.c_out}, rng);
    const Tensor y = kernels::conv2d_forward(x, w, b, c.stride, c.pad);
    const Tensor y_ref = kernels::reference::conv2d_forward(x, w, b, c.stride, c.pad);
    CHECK(max_abs_diff(y, y_ref) <= 1e-12);

    Tensor g = testing::random_tensor(y.shape(), rng);
    Tensor gw(w.shape()), gb(b.shape()), gw_ref(w.shape()), gb_ref(b.shape());
    const Tensor gx = kernels::conv2d_backward(x, w, g, c.stride, c.pad, &gw, &gb, true);
    const Tensor gx_ref =
        kernels::reference::conv2d_backward(x, w, g, c.stride, c.pad, &gw_ref, &gb_ref, true);
    CHECK(max_abs_diff(gx, gx_ref) <= 1e-12);
    CHECK(max_abs_diff(gw, gw_ref) <= 1e-12);
    CHECK(max_abs_diff(gb, gb_ref) <= 1e-12);
  }
}

TEST_CASE("conv2d backward accumulates into existing gradients") {
  Rng rng(2);
  Tensor x = testing::random_tensor({1, 2, 4, 4}, rng);
  Tensor w = testing::random_tensor({3, 2, 3, 3}, rng);
  Tensor g = testing::random_tensor({1, 3, 4, 4}, rng);
  Tensor once(w.shape()), twice(w.shape());
  kernels::conv2d_backward(x, w, g, 1, 1, &once, nullptr, false);
  kernels::conv2d_backward(x, w, g, 1, 1, &twice, nullptr, false);
  kernels::conv2d_backward(x, w, g, 1, 1, &twice, nullptr, false);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2 * once[i]));
  CHECK(kernels::conv2d_backward(x, w, g, 1, 1, nullptr, nullptr, false).empty());
}

TEST_CASE("conv2d on a hand-computed input") {
  // 1x1x3x3 ones, 3x3 ones kernel, padding 1: each output counts in-bounds taps.
  Tensor x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0);
  const Tensor y = kernels::conv2d_forward(x, w, Tensor(), 1, 1);
  const double expected[] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == expected[i]);
}

TEST_CASE("parallel linear matches the reference") {
  Rng rng(3);
  for (auto [rows, in, out] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 5, 3}, {64, 32, 17}}) {
    Tensor x = testing::random_tensor({rows, in}, rng);
    Tensor w = testing::random_tensor({out, in}, rng);
    Tensor b = testing::random_tensor({out}, rng);
    CHECK(max_abs_diff(kernels::linear_forward(x, w, b),
                       kernels::reference::linear_forward(x, w, b)) <= 1e-12);
    Tensor g = testing::random_tensor({rows, out}, rng);
    Tensor gw(w.shape()), gb(b.shape()), gw_ref(w.shape()), gb_ref(b.shape());
    const Tensor gx = kernels::linear_backward(x, w, g, &gw, &gb, true);
    const Tensor gx_ref = kernels::reference::linear_backward(x, w, g, &gw_ref, &gb_ref, true);
    CHECK(max_abs_diff(gx, gx_ref) <= 1e-12);
    CHECK(max_abs_diff(gw, gw_ref) <= 1e-12);
    CHECK(max_abs_diff(gb, gb_ref) <= 1e-12);
  }
}

TEST_CASE("pairwise distances") {
  Rng rng(4);
  Tensor a = testing::random_tensor({9, 6}, rng), b = testing::random_tensor({5, 6}, rng);
  const Tensor d = kernels::pairwise_distances(a, b);
  CHECK(max_abs_diff(d, kernels::reference::pairwise_distances(a, b)) <= 1e-12);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += std::pow(a.at(i, k) - b.at(j, k), 2);
      CHECK(d.at(i, j) == doctest::Approx(std::sqrt(s)).epsilon(1e-12));
    }
  }
  const Tensor self = kernels::pairwise_distances(a, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(self.at(i, i) == 0.0);
}
