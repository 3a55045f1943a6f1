#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "accar/wavelet.hpp"

using namespace accar;

namespace {

Tensor random_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({h, w});
  for (auto& v : t.mutable_val()) v = rng.uniform(0.0, 1.0);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.val()[i] - b.val()[i]));
  return m;
}

}  // namespace

TEST_CASE("dwt2: constant image") {
  for (WaveletFamily fam : {WaveletFamily::haar, WaveletFamily::daubechies, WaveletFamily::biorthogonal}) {
    Tensor img = Tensor::filled({8, 8}, 1.0);
    WaveletBands b = dwt2(img, fam);
    REQUIRE(b.ll.shape() == Shape{4, 4});
    for (double v : b.ll.val()) REQUIRE(v == Catch::Approx(1.0).margin(1e-12));
    for (double v : b.lh.val()) REQUIRE(std::fabs(v) < 1e-12);
    for (double v : b.hl.val()) REQUIRE(std::fabs(v) < 1e-12);
    for (double v : b.hh.val()) REQUIRE(std::fabs(v) < 1e-12);
  }
}

TEST_CASE("dwt2: haar block formulas") {
  Tensor img = Tensor::from({2, 2}, {1, 2, 3, 4});
  WaveletBands b = dwt2(img, WaveletFamily::haar);
  REQUIRE(b.ll.val()[0] == Catch::Approx(2.5));
  REQUIRE(b.hl.val()[0] == Catch::Approx(-0.5));
  REQUIRE(b.lh.val()[0] == Catch::Approx(-1.0));
  REQUIRE(b.hh.val()[0] == Catch::Approx(0.0).margin(1e-15));

  Tensor back = idwt2(b, WaveletFamily::haar);
  REQUIRE(max_abs_diff(back, img) < 1e-14);
}

TEST_CASE("dwt2: haar LL equals 2x2 average pooling") {
  Tensor img = random_image(12, 10, 31);
  WaveletBands b = dwt2(img, WaveletFamily::haar);
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 5; ++x) {
      const double avg = 0.25 * (img.val()[(2 * y) * 10 + 2 * x] + img.val()[(2 * y) * 10 + 2 * x + 1] +
                                 img.val()[(2 * y + 1) * 10 + 2 * x] + img.val()[(2 * y + 1) * 10 + 2 * x + 1]);
      REQUIRE(b.ll.val()[y * 5 + x] == avg);  // exact, same summation order not required at f64 scale
    }
}

TEST_CASE("idwt2: perfect reconstruction on random images") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Tensor img = random_image(16, 16, seed);
    REQUIRE(max_abs_diff(idwt2(dwt2(img, WaveletFamily::haar), WaveletFamily::haar), img) < 1e-12);
    REQUIRE(max_abs_diff(idwt2(dwt2(img, WaveletFamily::daubechies), WaveletFamily::daubechies), img) < 1e-8);
    REQUIRE(max_abs_diff(idwt2(dwt2(img, WaveletFamily::biorthogonal), WaveletFamily::biorthogonal), img) < 1e-8);
  }
}

TEST_CASE("idwt2: zero bands give a zero image") {
  WaveletBands b{Tensor::zeros({3, 3}), Tensor::zeros({3, 3}), Tensor::zeros({3, 3}), Tensor::zeros({3, 3})};
  for (WaveletFamily fam : {WaveletFamily::haar, WaveletFamily::daubechies, WaveletFamily::biorthogonal}) {
    Tensor img = idwt2(b, fam);
    for (double v : img.val()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("idwt2: band shape mismatch is structural") {
  WaveletBands b{Tensor::zeros({3, 3}), Tensor::zeros({3, 3}), Tensor::zeros({2, 3}), Tensor::zeros({3, 3})};
  REQUIRE_THROWS_AS(idwt2(b, WaveletFamily::haar), std::invalid_argument);
}

TEST_CASE("dwt2: odd sizes replicate-pad the trailing row/column") {
  Tensor img = random_image(5, 7, 77);
  Tensor padded = Tensor::zeros({6, 8});
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 8; ++x)
      padded.mutable_val()[y * 8 + x] = img.val()[std::min<int64_t>(y, 4) * 7 + std::min<int64_t>(x, 6)];
  WaveletBands a = dwt2(img, WaveletFamily::haar);
  WaveletBands b = dwt2(padded, WaveletFamily::haar);
  REQUIRE(a.ll.shape() == Shape{3, 4});
  REQUIRE(max_abs_diff(a.ll, b.ll) == 0.0);
  REQUIRE(max_abs_diff(a.hh, b.hh) == 0.0);
}

TEST_CASE("condition_pyramid: sizes halve and constants propagate") {
  Tensor img = Tensor::filled({64, 64}, 0.37);
  for (WaveletFamily fam : {WaveletFamily::haar, WaveletFamily::daubechies, WaveletFamily::biorthogonal}) {
    auto py = condition_pyramid(img, 4, fam);
    REQUIRE(py.size() == 5);
    for (int i = 0; i <= 4; ++i) {
      REQUIRE(py[size_t(i)].shape() == Shape{64 >> i, 64 >> i});
      for (double v : py[size_t(i)].val()) REQUIRE(v == Catch::Approx(0.37).margin(1e-12));
    }
  }
}

TEST_CASE("condition_pyramid: LL_1 of a 2x2-block-constant image recovers the blocks") {
  Rng rng(5);
  Tensor blocks = Tensor::zeros({4, 4});
  for (auto& v : blocks.mutable_val()) v = rng.uniform(0.0, 1.0);
  Tensor img = Tensor::zeros({8, 8});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) img.mutable_val()[y * 8 + x] = blocks.val()[(y / 2) * 4 + x / 2];
  auto py = condition_pyramid(img, 1, WaveletFamily::haar);
  REQUIRE(max_abs_diff(py[1], blocks) == 0.0);
}

TEST_CASE("condition_pyramid: too many levels is an error") {
  Tensor img = Tensor::filled({8, 8}, 1.0);
  REQUIRE_THROWS_AS(condition_pyramid(img, 4, WaveletFamily::haar), std::invalid_argument);
  REQUIRE_NOTHROW(condition_pyramid(img, 3, WaveletFamily::haar));
}

TEST_CASE("fft_lowpass: constant image passes through") {
  Tensor img = Tensor::filled({8, 8}, 0.6);
  Tensor out = fft_lowpass(img, 0.5);
  REQUIRE(out.shape() == Shape{4, 4});
  for (double v : out.val()) REQUIRE(v == Catch::Approx(0.6).margin(1e-12));
}

TEST_CASE("fft_lowpass: Nyquist checkerboard is annihilated at keep 0.5") {
  Tensor img = Tensor::zeros({8, 8});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) img.mutable_val()[y * 8 + x] = ((x + y) % 2 == 0) ? 1.0 : -1.0;
  Tensor out = fft_lowpass(img, 0.5);
  for (double v : out.val()) REQUIRE(std::fabs(v) < 1e-12);
}

TEST_CASE("fft_lowpass: keep_fraction 1 reduces to average pooling") {
  Tensor img = random_image(10, 8, 91);
  Tensor out = fft_lowpass(img, 1.0);
  Tensor pooled = average_pool2x2(img);
  REQUIRE(max_abs_diff(out, pooled) < 1e-10);
}
