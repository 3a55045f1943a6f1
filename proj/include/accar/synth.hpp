#pragma once

// Synthetic data: segmented phantom images and random free-form deformations
// with optional mask confinement, used for training pairs with known ground
// truth.

#include <cmath>
#include <vector>

#include "accar/tensor.hpp"
#include "accar/warp.hpp"

namespace accar {

struct Phantom {
  Tensor image;  // [H,W] intensities in [0,1]
  Tensor seg;    // [H,W] labels 0 (background) .. n_structures
  int64_t seed = 0;
};

struct FFDSpec {
  int64_t mesh_spacing = 16;  // pixels between control points
  double amplitude = 4.0;     // max control displacement; spacing/4 keeps fields invertible
  uint64_t seed = 0;
  Tensor mask;  // optional [H,W] confinement region; default: unconfined

  void validate() const {
    ACCAR_CHECK(mesh_spacing >= 4, "FFDSpec: mesh_spacing below 4");
    ACCAR_CHECK(amplitude >= 0.0, "FFDSpec: negative amplitude");
  }
};

struct PairSample {
  Tensor moving;      // phantom warped by true_field
  Tensor fixed;       // phantom image
  Tensor moving_seg;  // labels warped nearest-neighbor
  Tensor fixed_seg;
  Tensor true_field;  // [2,H,W]; perfect registration satisfies u(x) + true(x+u(x)) = 0
};

// Nested wobbly ellipses over a gentle background ramp. Every structure gets
// a distinct base intensity plus mild smooth shading so gradients are dense;
// all randomness comes from the seed.
inline Phantom gen_phantom(int64_t seed, int64_t size, int64_t n_structures) {
  ACCAR_CHECK(size >= 16 && size % 16 == 0, "gen_phantom: size must be a positive multiple of 16");
  ACCAR_CHECK(n_structures >= 1 && n_structures <= 5, "gen_phantom: n_structures outside [1,5]");
  Rng rng{uint64_t(seed)};
  const double cx = 0.5 * double(size) + rng.uniform(-double(size) / 16.0, double(size) / 16.0);
  const double cy = 0.5 * double(size) + rng.uniform(-double(size) / 16.0, double(size) / 16.0);
  const int64_t k = n_structures;
  std::vector<double> ax(size_t(k), 0.0), ay(size_t(k), 0.0), wob(size_t(k), 0.0);
  std::vector<double> phase(size_t(k), 0.0), ox(size_t(k), 0.0), oy(size_t(k), 0.0);
  std::vector<double> base(size_t(k), 0.0);
  std::vector<int> lobes(size_t(k), 0);
  double jx = 0.0, jy = 0.0;
  for (int64_t s = 0; s < k; ++s) {
    const double r = 0.40 * double(size) * (1.0 - 0.72 * double(s) / double(k));
    ax[size_t(s)] = r * (1.0 + rng.uniform(-0.12, 0.12));
    ay[size_t(s)] = r * (1.0 + rng.uniform(-0.12, 0.12));
    wob[size_t(s)] = rng.uniform(0.03, 0.08);
    lobes[size_t(s)] = 2 + int(rng.below(2));
    phase[size_t(s)] = rng.uniform(0.0, 6.283185307179586);
    jx += rng.uniform(-1.0, 1.0);
    jy += rng.uniform(-1.0, 1.0);
    ox[size_t(s)] = jx;
    oy[size_t(s)] = jy;
    // Base intensities spread over [0.30, 0.95]; the background ramp mean
    // sits near 0.07, keeping all label means at least 0.1 apart.
    base[size_t(s)] = k == 1 ? 0.95 : 0.30 + 0.65 * double(s) / double(k - 1);
  }
  const double shade_phase = rng.uniform(0.0, 6.283185307179586);
  Phantom ph;
  ph.seed = seed;
  ph.image = Tensor::zeros({size, size});
  ph.seg = Tensor::zeros({size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      int64_t label = 0;
      for (int64_t s = k - 1; s >= 0; --s) {
        const double dx = (double(x) - cx - ox[size_t(s)]) / ax[size_t(s)];
        const double dy = (double(y) - cy - oy[size_t(s)]) / ay[size_t(s)];
        const double rad = std::sqrt(dx * dx + dy * dy);
        const double theta = std::atan2(dy, dx);
        const double edge = 1.0 + wob[size_t(s)] * std::sin(double(lobes[size_t(s)]) * theta +
                                                            phase[size_t(s)]);
        if (rad <= edge) {
          label = s + 1;
          break;
        }
      }
      double v;
      if (label == 0) {
        v = 0.02 + 0.10 * double(x + y) / double(2 * size);
      } else {
        const double shade =
            0.02 * std::sin(6.283185307179586 * double(x + 2 * y) / double(size) + shade_phase);
        v = base[size_t(label - 1)] + shade;
      }
      ph.image.mutable_val()[size_t(y * size + x)] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      ph.seg.mutable_val()[size_t(y * size + x)] = double(label);
    }
  return ph;
}

namespace detail {

// Uniform cubic B-spline segment weights for local coordinate t in [0,1).
inline void bspline4(double t, double* b) {
  const double t2 = t * t, t3 = t2 * t;
  b[0] = (1.0 - t) * (1.0 - t) * (1.0 - t) / 6.0;
  b[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
  b[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
  b[3] = t3 / 6.0;
}

// Two-pass chamfer distance (1, sqrt 2 steps) from the mask, then a linear
// ramp to zero over `ramp` pixels.
inline std::vector<double> confinement_weight(const Tensor& mask, double ramp) {
  const int64_t h = mask.shape()[0], w = mask.shape()[1];
  const double big = 1e30, diag = 1.4142135623730951;
  std::vector<double> d(size_t(h * w), big);
  for (int64_t i = 0; i < h * w; ++i)
    if (mask.val()[size_t(i)] > 0.5) d[size_t(i)] = 0.0;
  auto relax = [&](int64_t i, int64_t j, double cost) {
    if (j >= 0 && j < h * w && d[size_t(j)] + cost < d[size_t(i)]) d[size_t(i)] = d[size_t(j)] + cost;
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      if (x > 0) relax(i, i - 1, 1.0);
      if (y > 0) relax(i, i - w, 1.0);
      if (y > 0 && x > 0) relax(i, i - w - 1, diag);
      if (y > 0 && x < w - 1) relax(i, i - w + 1, diag);
    }
  for (int64_t y = h - 1; y >= 0; --y)
    for (int64_t x = w - 1; x >= 0; --x) {
      const int64_t i = y * w + x;
      if (x < w - 1) relax(i, i + 1, 1.0);
      if (y < h - 1) relax(i, i + w, 1.0);
      if (y < h - 1 && x < w - 1) relax(i, i + w + 1, diag);
      if (y < h - 1 && x > 0) relax(i, i + w - 1, diag);
    }
  for (auto& v : d) v = v >= ramp ? 0.0 : 1.0 - v / ramp;
  return d;
}

}  // namespace detail

// Dense field from a control lattice [2,G,G] with the given spacing. Control
// index g sits at pixel g*spacing, and the lattice is stored with a one-node
// margin: array index = g + 1, so G must be at least (size-1)/spacing + 4.
inline Tensor ffd_from_controls(const Tensor& controls, int64_t spacing, int64_t size) {
  ACCAR_CHECK(controls.rank() == 3 && controls.shape()[0] == 2, "ffd_from_controls: [2,G,G] expected");
  const int64_t need = (size - 1) / spacing + 4;
  ACCAR_CHECK(controls.shape()[1] >= need && controls.shape()[2] >= need,
              "ffd_from_controls: control grid does not cover the image with margin");
  const int64_t gh = controls.shape()[1], gw = controls.shape()[2];
  Tensor field = Tensor::zeros({2, size, size});
  std::vector<double> bx(size_t(size * 4), 0.0);
  std::vector<int64_t> ix(size_t(size), 0);
  for (int64_t x = 0; x < size; ++x) {
    ix[size_t(x)] = x / spacing;
    detail::bspline4(double(x % spacing) / double(spacing), bx.data() + x * 4);
  }
  for (int64_t c = 0; c < 2; ++c) {
    const double* ctrl = controls.val().data() + c * gh * gw;
    double* out = field.mutable_val().data() + c * size * size;
    for (int64_t y = 0; y < size; ++y) {
      const double* by = bx.data() + y * 4;
      const int64_t j = ix[size_t(y)];
      for (int64_t x = 0; x < size; ++x) {
        const double* bxx = bx.data() + x * 4;
        const int64_t i = ix[size_t(x)];
        double acc = 0.0;
        for (int64_t m = 0; m < 4; ++m) {
          const double wy = by[m];
          const double* row = ctrl + (j + m) * gw + i;
          acc += wy * (bxx[0] * row[0] + bxx[1] * row[1] + bxx[2] * row[2] + bxx[3] * row[3]);
        }
        out[y * size + x] = acc;
      }
    }
  }
  return field;
}

// Random free-form deformation: control displacements ~ U(-a, a) per
// component, cubic B-spline interpolated, optionally faded to zero outside
// the mask over a 4 pixel ramp.
inline Tensor gen_ffd_field(const FFDSpec& spec, int64_t size) {
  spec.validate();
  ACCAR_CHECK(2 * spec.mesh_spacing <= size, "gen_ffd_field: spacing too large for image");
  const int64_t g = (size - 1) / spec.mesh_spacing + 4;
  Rng rng(spec.seed);
  Tensor controls = Tensor::zeros({2, g, g});
  for (auto& v : controls.mutable_val()) v = rng.uniform(-spec.amplitude, spec.amplitude);
  Tensor field = ffd_from_controls(controls, spec.mesh_spacing, size);
  if (spec.mask.defined()) {
    ACCAR_CHECK(spec.mask.rank() == 2 && spec.mask.shape()[0] == size && spec.mask.shape()[1] == size,
                "gen_ffd_field: mask size mismatch");
    const std::vector<double> wgt = detail::confinement_weight(spec.mask, 4.0);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < size * size; ++i)
        field.mutable_val()[size_t(c * size * size + i)] *= wgt[size_t(i)];
  }
  return field;
}

// fixed = phantom, moving = phantom resampled through the generated field, so
// the perfect prediction is the field's inverse (u(x) + true(x+u(x)) = 0).
inline PairSample gen_pair(const Phantom& phantom, const FFDSpec& spec) {
  ACCAR_CHECK(phantom.image.rank() == 2 && phantom.image.shape() == phantom.seg.shape(),
              "gen_pair: phantom image/seg mismatch");
  ACCAR_CHECK(phantom.image.shape()[0] == phantom.image.shape()[1], "gen_pair: square phantom expected");
  const int64_t size = phantom.image.shape()[0];
  PairSample out;
  out.true_field = gen_ffd_field(spec, size);
  out.fixed = phantom.image;
  out.fixed_seg = phantom.seg;
  out.moving = apply_displacement(phantom.image, out.true_field);
  out.moving_seg = warp_nearest(phantom.seg, out.true_field);
  return out;
}

}  // namespace accar
