#pragma once

// Registration network: Siamese conv encoders whose features are modulated at
// every scale by a conditioning pyramid of the input image, a skip-connected
// decoder producing a dense displacement field, a projection head for the
// contrast-invariance loss, and a separate variance decoder that reuses the
// shared encoder.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "accar/tensor.hpp"
#include "accar/wavelet.hpp"

namespace accar {

// What image drives the per-level modulation. The *_ll kinds condition on
// low-pass chains, haar_h on the three detail bands, haar_all on all four,
// fft on a Fourier-domain low-pass chain.
enum class ConditionKind { haar_ll, haar_h, haar_all, fft, daubechies_ll, bior_ll };

inline const char* condition_kind_name(ConditionKind k) {
  switch (k) {
    case ConditionKind::haar_ll: return "haar_ll";
    case ConditionKind::haar_h: return "haar_h";
    case ConditionKind::haar_all: return "haar_all";
    case ConditionKind::fft: return "fft";
    case ConditionKind::daubechies_ll: return "db";
    case ConditionKind::bior_ll: return "bior";
  }
  throw std::invalid_argument("accar: unknown condition kind");
}

inline ConditionKind condition_kind_parse(const std::string& s) {
  if (s == "haar_ll") return ConditionKind::haar_ll;
  if (s == "haar_h") return ConditionKind::haar_h;
  if (s == "haar_all") return ConditionKind::haar_all;
  if (s == "fft") return ConditionKind::fft;
  if (s == "db") return ConditionKind::daubechies_ll;
  if (s == "bior") return ConditionKind::bior_ll;
  throw std::invalid_argument("accar: unknown condition kind '" + s +
                              "' (expected haar_ll|haar_h|haar_all|fft|db|bior)");
}

struct NetworkConfig {
  int64_t side = 64;       // square input edge, divisible by 2^levels
  int64_t levels = 4;      // downsampling steps; latent edge = side / 2^levels
  int64_t enc_channels = 16;
  int64_t dec_channels = 32;
  int64_t proj_channels = 16;
  ConditionKind condition = ConditionKind::haar_ll;
  int64_t fixed_pyramid_level = -1;  // -1: per-level pyramid; k>=0: level-k content everywhere
  double slope = 0.2;
  double fft_keep = 0.5;
  bool use_modulation = true;  // false bypasses conditioning entirely (ablation)

  void validate() const {
    ACCAR_CHECK(levels >= 1 && levels <= 8, "NetworkConfig: levels outside [1,8]");
    ACCAR_CHECK(side >= (int64_t(1) << levels) && side % (int64_t(1) << levels) == 0,
                "NetworkConfig: side must be a positive multiple of 2^levels");
    ACCAR_CHECK(enc_channels >= 1 && dec_channels >= 1, "NetworkConfig: channel counts must be positive");
    ACCAR_CHECK(proj_channels >= 1, "NetworkConfig: proj_channels must be positive");
    ACCAR_CHECK(fixed_pyramid_level >= -1 && fixed_pyramid_level <= levels,
                "NetworkConfig: fixed pyramid level outside [-1, levels]");
    ACCAR_CHECK(slope >= 0.0 && slope < 1.0, "NetworkConfig: slope outside [0,1)");
    ACCAR_CHECK(fft_keep > 0.0 && fft_keep <= 1.0, "NetworkConfig: fft_keep outside (0,1]");
  }
};

using ModelParams = std::map<std::string, Tensor>;

inline const Tensor& param(const ModelParams& p, const std::string& name) {
  auto it = p.find(name);
  ACCAR_CHECK(it != p.end(), "missing parameter " + name);
  return it->second;
}

namespace detail {

inline Tensor he_uniform(Shape s, int64_t fan_in, double slope, Rng& rng) {
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * double(fan_in)));
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.mutable_val()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor as_chw(const Tensor& t) {
  return t.rank() == 2 ? reshape(t, {1, t.shape()[0], t.shape()[1]}) : t;
}

inline Tensor resample_condition(Tensor t, int64_t from_level, int64_t to_level) {
  for (int64_t l = from_level; l > to_level; --l) t = as_chw(upsample2x_bilinear(as_chw(t)));
  for (int64_t l = from_level; l < to_level; ++l) {
    Tensor c = as_chw(t);
    std::vector<Tensor> pooled;
    for (int64_t ch = 0; ch < c.shape()[0]; ++ch) {
      const int64_t n = c.shape()[1] * c.shape()[2];
      Tensor plane = Tensor::from({c.shape()[1], c.shape()[2]},
                                  std::vector<double>(c.val().begin() + ch * n,
                                                      c.val().begin() + (ch + 1) * n));
      pooled.push_back(as_chw(average_pool2x2(plane)));
    }
    t = concat_channels(pooled);
  }
  return t;
}

}  // namespace detail

// Conditioning tensors for levels 0..levels, level i sized side/2^i. Level 0
// is always the raw image: no detail band exists above the input resolution.
// With fixed_pyramid_level = k the level-k condition is resampled to every
// scale, so finer modulators see no content beyond what level k retains.
inline std::vector<Tensor> build_conditions(const Tensor& image, const NetworkConfig& cfg) {
  cfg.validate();
  ACCAR_CHECK(image.rank() == 2 && image.shape()[0] == cfg.side && image.shape()[1] == cfg.side,
              "build_conditions: image does not match configured side");
  std::vector<Tensor> conds;
  switch (cfg.condition) {
    case ConditionKind::haar_ll:
      conds = condition_pyramid(image, int(cfg.levels), WaveletFamily::haar);
      break;
    case ConditionKind::daubechies_ll:
      conds = condition_pyramid(image, int(cfg.levels), WaveletFamily::daubechies);
      break;
    case ConditionKind::bior_ll:
      conds = condition_pyramid(image, int(cfg.levels), WaveletFamily::biorthogonal);
      break;
    case ConditionKind::haar_h:
    case ConditionKind::haar_all: {
      conds.push_back(image);
      Tensor cur = image;
      for (int64_t i = 1; i <= cfg.levels; ++i) {
        WaveletBands b = dwt2(cur, WaveletFamily::haar);
        std::vector<Tensor> parts;
        if (cfg.condition == ConditionKind::haar_all) parts.push_back(detail::as_chw(b.ll));
        parts.push_back(detail::as_chw(b.lh));
        parts.push_back(detail::as_chw(b.hl));
        parts.push_back(detail::as_chw(b.hh));
        conds.push_back(concat_channels(parts));
        cur = b.ll;
      }
      break;
    }
    case ConditionKind::fft: {
      conds.push_back(image);
      Tensor cur = image;
      for (int64_t i = 1; i <= cfg.levels; ++i) {
        cur = fft_lowpass(cur, cfg.fft_keep);
        conds.push_back(cur);
      }
      break;
    }
  }
  if (cfg.fixed_pyramid_level >= 0) {
    const Tensor frozen = conds[size_t(cfg.fixed_pyramid_level)];
    for (int64_t i = 0; i <= cfg.levels; ++i)
      conds[size_t(i)] = detail::resample_condition(frozen, cfg.fixed_pyramid_level, i);
  }
  return conds;
}

inline int64_t condition_numel(const NetworkConfig& cfg, int64_t level) {
  const int64_t content_level = cfg.fixed_pyramid_level >= 0 ? cfg.fixed_pyramid_level : level;
  int64_t channels = 1;
  if (content_level > 0 && cfg.condition == ConditionKind::haar_h) channels = 3;
  if (content_level > 0 && cfg.condition == ConditionKind::haar_all) channels = 4;
  const int64_t s = cfg.side >> level;
  return channels * s * s;
}

// h' = alpha(v) * standardize(h) + beta(v), with v the flattened condition
// and (alpha, beta) a single linear layer's output split in half.
inline Tensor condition_modulate(const Tensor& h, const Tensor& condition, const Tensor& w,
                                 const Tensor& b) {
  ACCAR_CHECK(h.rank() == 3, "condition_modulate: [C,H,W] feature expected");
  ACCAR_CHECK(condition.rank() == 2 || condition.rank() == 3,
              "condition_modulate: [H,W] or [K,H,W] condition expected");
  const int64_t ch = condition.shape()[condition.rank() - 2];
  const int64_t cw = condition.shape()[condition.rank() - 1];
  ACCAR_CHECK(ch == h.shape()[1] && cw == h.shape()[2],
              "condition_modulate: condition size does not match feature size");
  const int64_t c = h.shape()[0];
  Tensor v = reshape(condition, {condition.numel()});
  Tensor ab = linear(v, w, b);
  ACCAR_CHECK(ab.numel() == 2 * c, "condition_modulate: projection must emit 2 values per channel");
  Tensor alpha = slice1d(ab, 0, c);
  Tensor beta = slice1d(ab, c, c);
  return channel_affine(instance_normalize(h).y, alpha, beta);
}

// Parameter tensors in a fixed draw order so a seed fully determines the
// model. Modulation projections start as the identity modulation (alpha=1,
// beta=0) and both output heads start at zero, so step 0 predicts the
// identity transform with unit variance.
inline ModelParams init_params(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  using detail::he_uniform;
  ModelParams p;
  const int64_t c = cfg.enc_channels, d = cfg.dec_channels;
  for (int64_t i = 0; i <= cfg.levels; ++i) {
    const int64_t in = i == 0 ? 1 : c;
    p["enc.block" + std::to_string(i) + ".w"] = he_uniform({c, in, 3, 3}, in * 9, cfg.slope, rng);
    p["enc.block" + std::to_string(i) + ".b"] = Tensor::zeros({c});
  }
  for (int64_t i = 0; i < cfg.levels; ++i) {
    p["enc.down" + std::to_string(i) + ".w"] = he_uniform({c, c, 3, 3}, c * 9, cfg.slope, rng);
    p["enc.down" + std::to_string(i) + ".b"] = Tensor::zeros({c});
  }
  if (cfg.use_modulation) {
    for (int64_t i = 0; i <= cfg.levels; ++i) {
      p["enc.mod" + std::to_string(i) + ".w"] = Tensor::zeros({2 * c, condition_numel(cfg, i)});
      Tensor b = Tensor::zeros({2 * c});
      for (int64_t j = 0; j < c; ++j) b.mutable_val()[size_t(j)] = 1.0;
      p["enc.mod" + std::to_string(i) + ".b"] = b;
    }
  }
  p["dec.bottleneck.w"] = he_uniform({d, 2 * c, 3, 3}, 2 * c * 9, cfg.slope, rng);
  p["dec.bottleneck.b"] = Tensor::zeros({d});
  for (int64_t i = 0; i < cfg.levels; ++i) {
    p["dec.up" + std::to_string(i) + ".w"] =
        he_uniform({d, d + 2 * c, 3, 3}, (d + 2 * c) * 9, cfg.slope, rng);
    p["dec.up" + std::to_string(i) + ".b"] = Tensor::zeros({d});
  }
  p["flow.head.w"] = Tensor::zeros({2, d, 1, 1});
  p["flow.head.b"] = Tensor::zeros({2});
  p["proj.head.w"] = he_uniform({cfg.proj_channels, c, 1, 1}, c, cfg.slope, rng);
  p["proj.head.b"] = Tensor::zeros({cfg.proj_channels});
  p["var.bottleneck.w"] = he_uniform({d, 2 * c, 3, 3}, 2 * c * 9, cfg.slope, rng);
  p["var.bottleneck.b"] = Tensor::zeros({d});
  for (int64_t i = 0; i < cfg.levels; ++i) {
    p["var.up" + std::to_string(i) + ".w"] =
        he_uniform({d, d + 2 * c, 3, 3}, (d + 2 * c) * 9, cfg.slope, rng);
    p["var.up" + std::to_string(i) + ".b"] = Tensor::zeros({d});
  }
  p["var.head.w"] = Tensor::zeros({1, d, 1, 1});
  p["var.head.b"] = Tensor::zeros({1});
  for (auto& kv : p) kv.second.set_requires_grad(true);
  return p;
}

// One shared-weight encoder branch: per level a 3x3 conv block, conditioned
// modulation, and (except at the coarsest level) a strided conv downsample.
// Returns the latent plus the pre-downsample feature of each finer level.
inline std::pair<Tensor, std::vector<Tensor>> encoder_forward(const Tensor& image,
                                                              const ModelParams& p,
                                                              const NetworkConfig& cfg) {
  cfg.validate();
  ACCAR_CHECK(image.rank() == 2 && image.shape()[0] == cfg.side && image.shape()[1] == cfg.side,
              "encoder_forward: image does not match configured side");
  std::vector<Tensor> conds;
  if (cfg.use_modulation) conds = build_conditions(image, cfg);
  Tensor x = reshape(image, {1, cfg.side, cfg.side});
  std::vector<Tensor> skips;
  for (int64_t i = 0; i <= cfg.levels; ++i) {
    const std::string lv = std::to_string(i);
    x = leaky_relu(conv2d(x, param(p, "enc.block" + lv + ".w"), param(p, "enc.block" + lv + ".b"), 1, 1),
                   cfg.slope);
    if (cfg.use_modulation)
      x = condition_modulate(x, conds[size_t(i)], param(p, "enc.mod" + lv + ".w"),
                             param(p, "enc.mod" + lv + ".b"));
    if (i < cfg.levels) {
      skips.push_back(x);
      x = leaky_relu(
          conv2d(x, param(p, "enc.down" + lv + ".w"), param(p, "enc.down" + lv + ".b"), 2, 1),
          cfg.slope);
    }
  }
  return {x, skips};
}

namespace detail {

inline Tensor decode_trunk(const std::string& prefix, const Tensor& latent_m,
                           const Tensor& latent_f, const std::vector<Tensor>& skips_m,
                           const std::vector<Tensor>& skips_f, const ModelParams& p,
                           const NetworkConfig& cfg) {
  ACCAR_CHECK(latent_m.shape() == latent_f.shape(), "decoder: latent shapes differ");
  ACCAR_CHECK(int64_t(skips_m.size()) == cfg.levels && skips_m.size() == skips_f.size(),
              "decoder: skip count does not match levels");
  Tensor x = concat_channels({latent_m, latent_f});
  x = leaky_relu(
      conv2d(x, param(p, prefix + ".bottleneck.w"), param(p, prefix + ".bottleneck.b"), 1, 1),
      cfg.slope);
  for (int64_t i = cfg.levels - 1; i >= 0; --i) {
    const std::string lv = std::to_string(i);
    x = upsample2x_bilinear(x);
    x = concat_channels({x, skips_m[size_t(i)], skips_f[size_t(i)]});
    x = leaky_relu(conv2d(x, param(p, prefix + ".up" + lv + ".w"), param(p, prefix + ".up" + lv + ".b"), 1, 1),
                   cfg.slope);
  }
  return x;
}

}  // namespace detail

// Full-resolution feature map feeding the flow head; exposed for feature-
// space comparisons between trained models.
inline Tensor decoder_features(const Tensor& latent_m, const Tensor& latent_f,
                               const std::vector<Tensor>& skips_m,
                               const std::vector<Tensor>& skips_f, const ModelParams& p,
                               const NetworkConfig& cfg) {
  return detail::decode_trunk("dec", latent_m, latent_f, skips_m, skips_f, p, cfg);
}

// Displacement in pixels, [2,H,W]: channel 0 = x offset, channel 1 = y offset.
inline Tensor decoder_forward(const Tensor& latent_m, const Tensor& latent_f,
                              const std::vector<Tensor>& skips_m,
                              const std::vector<Tensor>& skips_f, const ModelParams& p,
                              const NetworkConfig& cfg) {
  Tensor x = detail::decode_trunk("dec", latent_m, latent_f, skips_m, skips_f, p, cfg);
  return conv2d(x, param(p, "flow.head.w"), param(p, "flow.head.b"), 1, 0);
}

inline Tensor project_latent(const Tensor& latent, const ModelParams& p) {
  return conv2d(latent, param(p, "proj.head.w"), param(p, "proj.head.b"), 1, 0);
}

// Log-variance map [1,H,W] of the warped-vs-fixed residual. Both inputs pass
// through the shared encoder; only the decoder weights are variance-specific.
inline Tensor variance_forward(const Tensor& warped_aug, const Tensor& fixed_aug,
                               const ModelParams& p, const NetworkConfig& cfg) {
  ACCAR_CHECK(warped_aug.rank() == 2 && warped_aug.shape() == fixed_aug.shape(),
              "variance_forward: image sizes differ");
  auto enc_m = encoder_forward(warped_aug, p, cfg);
  auto enc_f = encoder_forward(fixed_aug, p, cfg);
  Tensor x = detail::decode_trunk("var", enc_m.first, enc_f.first, enc_m.second, enc_f.second, p, cfg);
  return conv2d(x, param(p, "var.head.w"), param(p, "var.head.b"), 1, 0);
}

}  // namespace accar
