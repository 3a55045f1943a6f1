#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "accar/augment.hpp"

using namespace accar;

namespace {

Tensor random_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({h, w});
  for (auto& v : t.mutable_val()) v = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("sample_rc_stack: structure and determinism") {
  RCStack a = sample_rc_stack(42, 4, 8, 0.2);
  RCStack b = sample_rc_stack(42, 4, 8, 0.2);
  REQUIRE(a.layers.size() == 4);
  REQUIRE(a.layers.front().in_ch == 1);
  REQUIRE(a.layers.back().out_ch == 1);
  REQUIRE(a.layers[1].in_ch == 8);
  REQUIRE(a.layers[1].out_ch == 8);
  for (size_t l = 0; l < 4; ++l) {
    REQUIRE(a.layers[l].weight == b.layers[l].weight);
    for (double bias : a.layers[l].bias) REQUIRE(bias == 0.0);
  }
  RCStack c = sample_rc_stack(43, 4, 8, 0.2);
  REQUIRE(a.layers[0].weight != c.layers[0].weight);
}

TEST_CASE("sample_rc_stack: per-layer weights are zero-centered") {
  for (uint64_t seed : {0u, 7u, 1234u, 99999u}) {
    RCStack st = sample_rc_stack(seed, 4, 8, 0.2);
    for (const RCLayer& layer : st.layers) {
      const double mean = std::accumulate(layer.weight.begin(), layer.weight.end(), 0.0) /
                          double(layer.weight.size());
      REQUIRE(std::fabs(mean) < 1e-12);
    }
  }
}

TEST_CASE("apply_rc_stack: identity single layer reproduces the image") {
  Tensor img = random_image(6, 6, 3);
  RCStack st = sample_rc_stack(1, 1, 1, 0.2);
  st.layers[0].weight[0] = 1.0;  // override: pure identity on nonnegative input
  AugmentResult res = apply_rc_stack(img, st);
  REQUIRE_FALSE(res.degenerate);
  // output is the min-max renormalization of the input
  double lo = *std::min_element(img.val().begin(), img.val().end());
  double hi = *std::max_element(img.val().begin(), img.val().end());
  for (int64_t i = 0; i < img.numel(); ++i)
    REQUIRE(res.image.val()[i] == Catch::Approx((img.val()[i] - lo) / (hi - lo)).margin(1e-12));
}

TEST_CASE("apply_rc_stack: negative weight routes through the leaky slope") {
  // single layer, weight -1: pixel 0.5 maps to leaky_relu(-0.5) = -0.1 before
  // renormalization. Feed a two-pixel image so the renormalization is easy to
  // invert by hand: pixels {0.5, 1.0} -> pre-norm {-0.1, -0.2} -> {1, 0}.
  Tensor img = Tensor::from({1, 2}, {0.5, 1.0});
  RCStack st = sample_rc_stack(1, 1, 1, 0.2);
  st.layers[0].weight[0] = -1.0;
  AugmentResult res = apply_rc_stack(img, st);
  REQUIRE(res.image.val()[0] == Catch::Approx(1.0));
  REQUIRE(res.image.val()[1] == Catch::Approx(0.0));
}

TEST_CASE("apply_rc_stack: output is pixelwise") {
  Tensor img = random_image(5, 7, 11);
  RCStack st = sample_rc_stack(5, 4, 8, 0.2);
  AugmentResult base = apply_rc_stack(img, st);

  // permute pixels, augment, unpermute: must equal augmenting the original
  const int64_t n = img.numel();
  std::vector<int64_t> perm(size_t(n), 0);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(17);
  for (int64_t i = n - 1; i > 0; --i) std::swap(perm[size_t(i)], perm[size_t(rng.below(i + 1))]);
  Tensor shuffled = Tensor::zeros(img.shape());
  for (int64_t i = 0; i < n; ++i) shuffled.mutable_val()[perm[size_t(i)]] = img.val()[i];
  AugmentResult aug_shuffled = apply_rc_stack(shuffled, st);
  for (int64_t i = 0; i < n; ++i)
    REQUIRE(aug_shuffled.image.val()[perm[size_t(i)]] == Catch::Approx(base.image.val()[i]).margin(1e-12));
}

TEST_CASE("apply_rc_stack: images equal off a set S differ only on S") {
  Tensor a = random_image(6, 6, 21);
  Tensor b = a.detach();
  b.mutable_val()[7] = 0.93;
  b.mutable_val()[20] = 0.01;
  RCStack st = sample_rc_stack(9, 4, 8, 0.2);
  AugmentResult ra = apply_rc_stack(a, st);
  AugmentResult rb = apply_rc_stack(b, st);
  // compare pre-normalization behaviour: identical pixels stay identical up to
  // the (shared) affine renormalization only if min/max pixels are unchanged;
  // instead check on raw stack output by disabling normalization effects:
  // pixels outside S have identical inputs, hence identical raw outputs.
  // Renormalization is monotone affine, so equality off S holds whenever the
  // min/max pixels are off S; enforce that by construction here.
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (i == 7 || i == 20) continue;
    REQUIRE(ra.image.val()[i] == Catch::Approx(rb.image.val()[i]).margin(1e-9));
  }
}

TEST_CASE("apply_rc_stack: range and degeneracy") {
  SECTION("non-degenerate output lands in [0,1]") {
    Tensor img = random_image(8, 8, 33);
    for (uint64_t seed = 0; seed < 20; ++seed) {
      AugmentResult res = apply_rc_stack(img, sample_rc_stack(seed, 4, 8, 0.2));
      if (res.degenerate) continue;
      for (double v : res.image.val()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
  }
  SECTION("constant image degenerates to zeros with the flag set") {
    Tensor img = Tensor::filled({4, 4}, 0.5);
    AugmentResult res = apply_rc_stack(img, sample_rc_stack(3, 4, 8, 0.2));
    REQUIRE(res.degenerate);
    for (double v : res.image.val()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("apply_rc_stack: distinct stacks give distinct contrasts") {
  Tensor img = random_image(8, 8, 55);
  AugmentResult r1 = apply_rc_stack(img, sample_rc_stack(100, 4, 8, 0.2));
  AugmentResult r2 = apply_rc_stack(img, sample_rc_stack(101, 4, 8, 0.2));
  REQUIRE_FALSE(r1.degenerate);
  REQUIRE_FALSE(r2.degenerate);
  double diff = 0.0;
  for (int64_t i = 0; i < img.numel(); ++i) diff += std::fabs(r1.image.val()[i] - r2.image.val()[i]);
  REQUIRE(diff / double(img.numel()) > 1e-3);
}
