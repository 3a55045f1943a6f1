#pragma once

// Random-convolution contrast augmentation: a stack of randomly initialized
// 1x1 convolutions with LeakyReLU activations turns a mono-contrast image
// into one of simulated arbitrary contrast. Purely pixelwise, so anatomy is
// untouched. Runs on raw values; augmentation is data preparation and never
// differentiated through.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "accar/common.hpp"
#include "accar/tensor.hpp"

namespace accar {

struct RCLayer {
  int64_t in_ch = 0, out_ch = 0;
  std::vector<double> weight;  // [out_ch * in_ch], 1x1 kernels
  std::vector<double> bias;    // [out_ch]
};

struct RCStack {
  std::vector<RCLayer> layers;
  double slope = 0.2;
  uint64_t seed = 0;
};

// Weights ~ U(0,10), then per-layer zero-centering; biases stay zero.
inline RCStack sample_rc_stack(uint64_t seed, int n_layers = 4, int hidden_channels = 8,
                               double slope = 0.2) {
  ACCAR_CHECK(n_layers >= 1, "sample_rc_stack: need at least one layer");
  ACCAR_CHECK(hidden_channels >= 1, "sample_rc_stack: need at least one hidden channel");
  Rng rng(seed);
  RCStack st;
  st.slope = slope;
  st.seed = seed;
  for (int l = 0; l < n_layers; ++l) {
    RCLayer layer;
    layer.in_ch = l == 0 ? 1 : hidden_channels;
    layer.out_ch = l == n_layers - 1 ? 1 : hidden_channels;
    layer.weight.resize(size_t(layer.in_ch * layer.out_ch));
    for (auto& w : layer.weight) w = rng.uniform(0.0, 10.0);
    double mean = 0.0;
    for (double w : layer.weight) mean += w;
    mean /= double(layer.weight.size());
    for (auto& w : layer.weight) w -= mean;
    layer.bias.assign(size_t(layer.out_ch), 0.0);
    st.layers.push_back(std::move(layer));
  }
  return st;
}

struct AugmentResult {
  Tensor image;
  bool degenerate = false;  // constant pre-normalization output, image is all zeros
};

inline AugmentResult apply_rc_stack(const Tensor& image, const RCStack& stack) {
  ACCAR_CHECK(image.rank() == 2, "apply_rc_stack: [H,W] image expected");
  ACCAR_CHECK(!stack.layers.empty(), "apply_rc_stack: empty stack");
  ACCAR_CHECK(stack.layers.front().in_ch == 1 && stack.layers.back().out_ch == 1,
              "apply_rc_stack: stack must map 1 channel to 1 channel");
  const int64_t n = image.numel();
  std::vector<double> cur(image.val());
  std::vector<double> next;
  int64_t cur_ch = 1;
  for (const RCLayer& layer : stack.layers) {
    ACCAR_CHECK(layer.in_ch == cur_ch, "apply_rc_stack: channel chain mismatch");
    next.assign(size_t(layer.out_ch * n), 0.0);
    for (int64_t o = 0; o < layer.out_ch; ++o) {
      double* dst = next.data() + o * n;
      for (int64_t c = 0; c < layer.in_ch; ++c) {
        const double w = layer.weight[size_t(o * layer.in_ch + c)];
        const double* src = cur.data() + c * n;
        for (int64_t i = 0; i < n; ++i) dst[i] += w * src[i];
      }
      const double b = layer.bias[size_t(o)];
      for (int64_t i = 0; i < n; ++i) {
        const double v = dst[i] + b;
        dst[i] = v > 0.0 ? v : stack.slope * v;
      }
    }
    cur.swap(next);
    cur_ch = layer.out_ch;
  }

  double lo = cur[0], hi = cur[0];
  for (double v : cur) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  AugmentResult res;
  if (hi == lo) {
    res.image = Tensor::zeros(image.shape());
    res.degenerate = true;
    return res;
  }
  res.image = Tensor::zeros(image.shape());
  const double inv = 1.0 / (hi - lo);
  for (int64_t i = 0; i < n; ++i) res.image.mutable_val()[i] = (cur[i] - lo) * inv;
  return res;
}

}  // namespace accar
