#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "accar/tensor.hpp"

using namespace accar;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.mutable_val()) v = rng.uniform(lo, hi);
  return t;
}

// Independent direct-summation convolution used as the forward oracle.
std::vector<double> conv_reference(const std::vector<double>& in, int64_t ci, int64_t h, int64_t w,
                                   const std::vector<double>& wt, int64_t co, int64_t k,
                                   const std::vector<double>& b, int64_t stride, int64_t pad) {
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(size_t(co * oh * ow), 0.0);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double s = b[size_t(o)];
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t iy = oy * stride + ky - pad;
              const int64_t ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += wt[size_t(((o * ci + c) * k + ky) * k + kx)] * in[size_t((c * h + iy) * w + ix)];
            }
        out[size_t((o * oh + oy) * ow + ox)] = s;
      }
  return out;
}

double sum_sq_loss(const Tensor& y) { return reduce_mean(mul(y, y)).item(); }

}  // namespace

TEST_CASE("conv2d: identity 1x1 kernel") {
  Rng rng(1);
  Tensor x = random_tensor({2, 5, 6}, rng);
  Tensor w = Tensor::from({2, 2, 1, 1}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor y = conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{2, 5, 6});
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.val()[i] == x.val()[i]);
}

TEST_CASE("conv2d: all-ones 3x3 on constant image gives 9 in the interior") {
  Tensor x = Tensor::filled({1, 6, 6}, 1.0);
  Tensor w = Tensor::filled({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == Shape{1, 6, 6});
  for (int64_t yy = 1; yy < 5; ++yy)
    for (int64_t xx = 1; xx < 5; ++xx) REQUIRE(y.val()[yy * 6 + xx] == Catch::Approx(9.0));
  REQUIRE(y.val()[0] == Catch::Approx(4.0));  // corner sees a 2x2 patch
}

TEST_CASE("conv2d: forward matches direct summation over parameter grid") {
  Rng rng(2);
  for (int64_t k : {int64_t(1), int64_t(3)})
    for (int64_t stride : {int64_t(1), int64_t(2)})
      for (int64_t pad : {int64_t(0), k / 2}) {
        const int64_t ci = 2, co = 3, h = 7, w = 6;
        Tensor x = random_tensor({ci, h, w}, rng);
        Tensor wt = random_tensor({co, ci, k, k}, rng);
        Tensor b = random_tensor({co}, rng);
        Tensor y = conv2d(x, wt, b, stride, pad);
        auto ref = conv_reference(x.val(), ci, h, w, wt.val(), co, k, b.val(), stride, pad);
        REQUIRE(y.numel() == int64_t(ref.size()));
        for (size_t i = 0; i < ref.size(); ++i) REQUIRE(y.val()[i] == Catch::Approx(ref[i]).margin(1e-12));
      }
}

TEST_CASE("conv2d: gradients match finite differences") {
  Rng rng(3);
  const int64_t ci = 2, co = 2, h = 5, w = 5;
  Tensor x0 = random_tensor({ci, h, w}, rng);
  Tensor w0 = random_tensor({co, ci, 3, 3}, rng);
  Tensor b0 = random_tensor({co}, rng);
  for (int64_t stride : {int64_t(1), int64_t(2)}) {
    auto wrt_weight = [&, stride](const Tensor& w_) { return reduce_mean(mul(conv2d(x0, w_, b0, stride, 1), conv2d(x0, w_, b0, stride, 1))); };
    auto wrt_input = [&, stride](const Tensor& x_) { return reduce_mean(mul(conv2d(x_, w0, b0, stride, 1), conv2d(x_, w0, b0, stride, 1))); };
    auto wrt_bias = [&, stride](const Tensor& b_) { return reduce_mean(mul(conv2d(x0, w0, b_, stride, 1), conv2d(x0, w0, b_, stride, 1))); };
    REQUIRE(gradient_check(wrt_weight, w0) < 1e-6);
    REQUIRE(gradient_check(wrt_input, x0) < 1e-6);
    REQUIRE(gradient_check(wrt_bias, b0) < 1e-6);
  }
}

TEST_CASE("linear: examples and input gradient") {
  Tensor x = Tensor::from({2}, {1, 1});
  Tensor w = Tensor::from({2, 2}, {2, 0, 0, 3});
  Tensor b = Tensor::from({2}, {1, 1});
  Tensor y = linear(x, w, b);
  REQUIRE(y.val() == std::vector<double>{3, 4});

  Tensor wi = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b0 = Tensor::zeros({2});
  Tensor yi = linear(x, wi, b0);
  REQUIRE(yi.val() == x.val());

  // d mean(Wx+b) / dx = W^T * (1/M) column sums
  Tensor xg = Tensor::from({2}, {0.3, -0.7}, true);
  Tensor w2 = Tensor::from({2, 2}, {2, -1, 4, 5});
  {
    Tape tape;
    Tensor loss = reduce_mean(linear(xg, w2, b));
    tape.backward(loss);
  }
  REQUIRE(xg.grad()[0] == Catch::Approx((2.0 + 4.0) / 2.0));
  REQUIRE(xg.grad()[1] == Catch::Approx((-1.0 + 5.0) / 2.0));

  Rng rng(4);
  Tensor xr = random_tensor({5}, rng);
  Tensor wr = random_tensor({3, 5}, rng);
  Tensor br = random_tensor({3}, rng);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(linear(t, wr, br), linear(t, wr, br))); }, xr) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(linear(xr, t, br), linear(xr, t, br))); }, wr) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(linear(xr, wr, t), linear(xr, wr, t))); }, br) < 1e-6);
}

TEST_CASE("leaky_relu: values and subgradients") {
  Tensor x = Tensor::from({4}, {3.0, -1.0, -2.0, 2.0}, true);
  Tensor y = leaky_relu(x, 0.2);
  REQUIRE(y.val()[0] == 3.0);
  REQUIRE(y.val()[1] == Catch::Approx(-0.2));
  {
    Tape tape;
    Tensor loss = reduce_mean(leaky_relu(x, 0.2));
    tape.backward(loss);
  }
  REQUIRE(x.grad()[2] == Catch::Approx(0.2 / 4.0));
  REQUIRE(x.grad()[3] == Catch::Approx(1.0 / 4.0));

  // subgradient at exactly 0 is the slope
  Tensor z = Tensor::from({1}, {0.0}, true);
  {
    Tape tape;
    tape.backward(reduce_mean(leaky_relu(z, 0.2)));
  }
  REQUIRE(z.grad()[0] == Catch::Approx(0.2));
}

TEST_CASE("instance_normalize: closed-form statistics") {
  SECTION("constant channel") {
    Tensor x = Tensor::filled({1, 2, 2}, 5.0);
    auto in = instance_normalize(x, 1e-5);
    REQUIRE(in.mu.val()[0] == Catch::Approx(5.0));
    REQUIRE(in.sigma.val()[0] == 0.0);
    for (double v : in.y.val()) REQUIRE(std::fabs(v) < 1e-9);
  }
  SECTION("two-value channel {0,2}") {
    Tensor x = Tensor::from({1, 1, 2}, {0.0, 2.0});
    auto in = instance_normalize(x, 1e-5);
    REQUIRE(in.mu.val()[0] == Catch::Approx(1.0));
    REQUIRE(in.sigma.val()[0] == Catch::Approx(1.0));
    REQUIRE(in.y.val()[0] == Catch::Approx(-1.0).epsilon(1e-4));
    REQUIRE(in.y.val()[1] == Catch::Approx(1.0).epsilon(1e-4));
  }
  SECTION("random input is normalized") {
    Rng rng(5);
    Tensor x = random_tensor({3, 8, 8}, rng, -5.0, 5.0);
    auto in = instance_normalize(x, 1e-5);
    for (int64_t c = 0; c < 3; ++c) {
      double m = 0.0, v = 0.0;
      const double* yc = in.y.val().data() + c * 64;
      for (int64_t i = 0; i < 64; ++i) m += yc[i];
      m /= 64.0;
      for (int64_t i = 0; i < 64; ++i) v += (yc[i] - m) * (yc[i] - m);
      v /= 64.0;
      REQUIRE(std::fabs(m) < 1e-10);
      REQUIRE(std::fabs(std::sqrt(v) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("instance_normalize: gradients through all three outputs") {
  Rng rng(6);
  Tensor x = random_tensor({2, 4, 4}, rng, -2.0, 2.0);
  auto via_y = [](const Tensor& t) {
    auto in = instance_normalize(t, 1e-5);
    Tensor probe = Tensor::zeros(in.y.shape());
    for (int64_t i = 0; i < probe.numel(); ++i) probe.mutable_val()[i] = 0.1 + 0.01 * double(i);
    return reduce_mean(mul(in.y, probe));
  };
  auto via_mu = [](const Tensor& t) {
    auto in = instance_normalize(t, 1e-5);
    return reduce_mean(mul(in.mu, in.mu));
  };
  auto via_sigma = [](const Tensor& t) {
    auto in = instance_normalize(t, 1e-5);
    return reduce_mean(mul(in.sigma, in.sigma));
  };
  REQUIRE(gradient_check(via_y, x) < 1e-6);
  REQUIRE(gradient_check(via_mu, x) < 1e-6);
  REQUIRE(gradient_check(via_sigma, x) < 1e-6);
}

TEST_CASE("channel_affine: per-channel scale and shift with gradients") {
  Rng rng(7);
  Tensor x = random_tensor({3, 4, 5}, rng);
  Tensor a = random_tensor({3}, rng, 0.5, 1.5);
  Tensor b = random_tensor({3}, rng);
  Tensor y = channel_affine(x, a, b);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 20; ++i)
      REQUIRE(y.val()[c * 20 + i] == Catch::Approx(x.val()[c * 20 + i] * a.val()[c] + b.val()[c]));
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(channel_affine(t, a, b), channel_affine(t, a, b))); }, x) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(channel_affine(x, t, b), channel_affine(x, t, b))); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(channel_affine(x, a, t), channel_affine(x, a, t))); }, b) < 1e-6);
}

TEST_CASE("upsample2x_bilinear: contract") {
  SECTION("constant stays constant, shape doubles") {
    Tensor x = Tensor::filled({2, 4, 4}, 3.25);
    Tensor y = upsample2x_bilinear(x);
    REQUIRE(y.shape() == Shape{2, 8, 8});
    for (double v : y.val()) REQUIRE(v == Catch::Approx(3.25));
  }
  SECTION("ramp along width gives evenly spaced interpolants") {
    Tensor x = Tensor::from({1, 1, 2}, {0.0, 1.0});
    Tensor y = upsample2x_bilinear(x);
    REQUIRE(y.shape() == Shape{1, 2, 4});
    for (int64_t i = 0; i < 4; ++i) REQUIRE(y.val()[i] == Catch::Approx(double(i) / 3.0));
  }
  SECTION("gradient") {
    Rng rng(8);
    Tensor x = random_tensor({2, 3, 4}, rng);
    REQUIRE(gradient_check([](const Tensor& t) { return reduce_mean(mul(upsample2x_bilinear(t), upsample2x_bilinear(t))); }, x) < 1e-6);
  }
}

TEST_CASE("concat_channels: stacking and gradient routing") {
  Rng rng(9);
  Tensor a = random_tensor({2, 4, 4}, rng);
  Tensor b = random_tensor({3, 4, 4}, rng);
  Tensor y = concat_channels({a, b});
  REQUIRE(y.shape() == Shape{5, 4, 4});
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(y.val()[i] == a.val()[i]);
  for (int64_t i = 0; i < b.numel(); ++i) REQUIRE(y.val()[a.numel() + i] == b.val()[i]);

  Tensor z = Tensor::zeros({1, 4, 4});
  Tensor az = concat_channels({a, z});
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(az.val()[i] == a.val()[i]);

  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(concat_channels({t, b}), concat_channels({t, b}))); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(concat_channels({a, t}), concat_channels({a, t}))); }, b) < 1e-6);
  REQUIRE_THROWS_AS(concat_channels({a, Tensor::zeros({1, 3, 4})}), std::invalid_argument);
}

TEST_CASE("reduce_mean: values and gradient") {
  REQUIRE(reduce_mean(Tensor::from({3}, {1, 2, 3})).item() == Catch::Approx(2.0));
  REQUIRE(reduce_mean(Tensor::zeros({4})).item() == 0.0);

  Tensor x = Tensor::from({3}, {0.5, -1.5, 2.0}, true);
  {
    Tape tape;
    tape.backward(reduce_mean(mul(x, x)));
  }
  for (int64_t i = 0; i < 3; ++i) REQUIRE(x.grad()[i] == Catch::Approx(2.0 * x.val()[i] / 3.0));
}

TEST_CASE("detach: stop-gradient semantics") {
  SECTION("loss = mean(detach(x) * x) has gradient detach(x)/N") {
    Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    {
      Tape tape;
      tape.backward(reduce_mean(mul(detach(x), x)));
    }
    for (int64_t i = 0; i < 3; ++i) REQUIRE(x.grad()[i] == Catch::Approx(x.val()[i] / 3.0));
    // and the same composite against finite differences of the full function
    // f(x) = mean(x*x) would give 2x/N; the stop-gradient halves it.
  }
  SECTION("function of only detached inputs yields no gradient") {
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    {
      Tape tape;
      Tensor d = detach(x);
      tape.backward(reduce_mean(mul(d, d)));
    }
    REQUIRE_FALSE(x.has_grad());
  }
  SECTION("detach keeps values") {
    Tensor x = Tensor::from({2}, {4.0, 5.0});
    REQUIRE(detach(x).val() == x.val());
  }
}

TEST_CASE("backward: contract") {
  SECTION("chained ops match finite differences") {
    Rng rng(10);
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    Tensor b = Tensor::from({2}, {0.3, -0.4});
    Tensor x = random_tensor({1, 5, 5}, rng, 0.5, 1.5);
    auto f = [&](const Tensor& t) { return reduce_mean(mul(leaky_relu(conv2d(t, w, b, 1, 1), 0.2), leaky_relu(conv2d(t, w, b, 1, 1), 0.2))); };
    REQUIRE(gradient_check(f, x) < 1e-5);
  }
  SECTION("constant loss leaves grads empty") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor c = Tensor::scalar(7.0);
    {
      Tape tape;
      tape.backward(reduce_mean(c));
    }
    REQUIRE_FALSE(x.has_grad());
  }
  SECTION("double backward without reset is an error") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tape tape;
    Tensor loss = reduce_mean(mul(x, x));
    tape.backward(loss);
    REQUIRE_THROWS_AS(tape.backward(loss), std::invalid_argument);
    tape.reset();
  }
  SECTION("non-scalar loss is an error") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tape tape;
    Tensor y = mul(x, x);
    REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
}

TEST_CASE("gradient_check: harness self-test") {
  Rng rng(11);
  Tensor x = random_tensor({6}, rng, 0.5, 2.0);
  REQUIRE(gradient_check([](const Tensor& t) { return reduce_mean(mul(t, t)); }, x) < 1e-7);

  Tensor w = random_tensor({3, 6}, rng);
  Tensor b = random_tensor({3}, rng);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(linear(t, w, b), linear(t, w, b))); }, x) < 1e-6);

  REQUIRE(gradient_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
}

TEST_CASE("elementwise ops: gradients") {
  Rng rng(12);
  Tensor a = random_tensor({8}, rng, 0.2, 1.8);
  Tensor b = random_tensor({8}, rng, 0.7, 2.0);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(add(t, b), add(t, b))); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(sub(t, b), sub(t, b))); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(mul(t, b), t)); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(divide(a, t), divide(a, t))); }, b) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(accar::exp(t), accar::exp(t))); }, a) < 1e-6);
  REQUIRE(gradient_check([&](const Tensor& t) { return reduce_mean(mul(scale(t, -1.7), add_scalar(t, 0.3))); }, a) < 1e-6);
}

TEST_CASE("reshape and slice1d: round trips and gradients") {
  Rng rng(13);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor flat = reshape(x, {24});
  REQUIRE(flat.val() == x.val());
  Tensor back = reshape(flat, {2, 3, 4});
  REQUIRE(back.val() == x.val());
  REQUIRE(gradient_check([](const Tensor& t) { return reduce_mean(mul(reshape(t, {24}), reshape(t, {24}))); }, x) < 1e-6);

  Tensor v = random_tensor({10}, rng);
  Tensor s = slice1d(v, 3, 4);
  for (int64_t i = 0; i < 4; ++i) REQUIRE(s.val()[i] == v.val()[3 + i]);
  REQUIRE(gradient_check([](const Tensor& t) { return reduce_mean(mul(slice1d(t, 2, 5), slice1d(t, 2, 5))); }, v) < 1e-6);
}

TEST_CASE("box_sum: window sums match direct loops") {
  Rng rng(14);
  Tensor x = random_tensor({2, 7, 8}, rng);
  const int64_t win = 3;
  Tensor y = box_sum(x, win);
  REQUIRE(y.shape() == Shape{2, 5, 6});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t oy = 0; oy < 5; ++oy)
      for (int64_t ox = 0; ox < 6; ++ox) {
        double s = 0.0;
        for (int64_t ky = 0; ky < win; ++ky)
          for (int64_t kx = 0; kx < win; ++kx) s += x.val()[(c * 7 + oy + ky) * 8 + ox + kx];
        REQUIRE(y.val()[(c * 5 + oy) * 6 + ox] == Catch::Approx(s).margin(1e-12));
      }
  REQUIRE(gradient_check([](const Tensor& t) { return reduce_mean(mul(box_sum(t, 3), box_sum(t, 3))); }, x) < 1e-6);
}

TEST_CASE("forward evaluation is bit-deterministic") {
  Rng rng(15);
  Tensor x = random_tensor({2, 6, 6}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y1 = conv2d(x, w, b, 1, 1);
  Tensor y2 = conv2d(x, w, b, 1, 1);
  REQUIRE(y1.val() == y2.val());
  auto n1 = instance_normalize(x).y;
  auto n2 = instance_normalize(x).y;
  REQUIRE(n1.val() == n2.val());
}
