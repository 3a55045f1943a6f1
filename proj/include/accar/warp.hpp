#pragma once

// Displacement-field warping (differentiable bilinear resampling) and
// Jacobian-based deformation analysis. Displacements are in pixel units with
// origin at the top-left; a field u maps output pixel x to sample location
// x + u(x). Component 0 of u displaces along width, component 1 along height.

#include <cmath>
#include <cstdint>
#include <vector>

#include "accar/common.hpp"
#include "accar/tensor.hpp"

namespace accar {

namespace detail {

struct Sample {
  int64_t x0, x1, y0, y1;
  double fx, fy;
  bool in_x, in_y;  // false when the coordinate was clamped to the border
};

inline Sample locate(double sx, double sy, int64_t h, int64_t w) {
  Sample s;
  s.in_x = sx > 0.0 && sx < double(w - 1);
  s.in_y = sy > 0.0 && sy < double(h - 1);
  const double cx = sx < 0.0 ? 0.0 : (sx > double(w - 1) ? double(w - 1) : sx);
  const double cy = sy < 0.0 ? 0.0 : (sy > double(h - 1) ? double(h - 1) : sy);
  s.x0 = int64_t(cx);
  if (s.x0 > w - 2) s.x0 = w >= 2 ? w - 2 : 0;
  s.y0 = int64_t(cy);
  if (s.y0 > h - 2) s.y0 = h >= 2 ? h - 2 : 0;
  s.x1 = s.x0 + 1 < w ? s.x0 + 1 : s.x0;
  s.y1 = s.y0 + 1 < h ? s.y0 + 1 : s.y0;
  s.fx = cx - double(s.x0);
  s.fy = cy - double(s.y0);
  return s;
}

}  // namespace detail

// output(x) = image sampled at x + u(x), bilinear, border replicate.
// Differentiable w.r.t. both the image and the field.
inline Tensor apply_displacement(const Tensor& image, const Tensor& u) {
  ACCAR_CHECK(image.rank() == 2 || image.rank() == 3, "apply_displacement: image [H,W] or [C,H,W]");
  const bool flat = image.rank() == 2;
  const int64_t c = flat ? 1 : image.shape()[0];
  const int64_t h = flat ? image.shape()[0] : image.shape()[1];
  const int64_t w = flat ? image.shape()[1] : image.shape()[2];
  ACCAR_CHECK(u.rank() == 3 && u.shape()[0] == 2 && u.shape()[1] == h && u.shape()[2] == w,
              "apply_displacement: field must be [2,H,W] matching the image");

  Tensor out = Tensor::zeros(image.shape());
  const double* ux = u.val().data();
  const double* uy = u.val().data() + h * w;
  std::vector<detail::Sample> samples(size_t(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      samples[size_t(i)] = detail::locate(double(x) + ux[i], double(y) + uy[i], h, w);
    }
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* ic = image.val().data() + ch * h * w;
    double* oc = out.mutable_val().data() + ch * h * w;
    for (int64_t i = 0; i < h * w; ++i) {
      const detail::Sample& s = samples[size_t(i)];
      const double v00 = ic[s.y0 * w + s.x0], v01 = ic[s.y0 * w + s.x1];
      const double v10 = ic[s.y1 * w + s.x0], v11 = ic[s.y1 * w + s.x1];
      oc[i] = (1 - s.fy) * ((1 - s.fx) * v00 + s.fx * v01) + s.fy * ((1 - s.fx) * v10 + s.fx * v11);
    }
  }

  if (detail::tracking({&image, &u})) {
    detail::mark_and_record(out, [image, u, out, samples, c, h, w]() mutable {
      const double* g = out.grad().data();
      const bool gi = image.requires_grad(), gu = u.requires_grad();
      if (gi) image.ensure_grad();
      if (gu) u.ensure_grad();
      double* ugx = gu ? u.data_ptr()->grad.data() : nullptr;
      double* ugy = gu ? u.data_ptr()->grad.data() + h * w : nullptr;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* ic = image.val().data() + ch * h * w;
        const double* gc = g + ch * h * w;
        double* igc = gi ? image.data_ptr()->grad.data() + ch * h * w : nullptr;
        for (int64_t i = 0; i < h * w; ++i) {
          const detail::Sample& s = samples[size_t(i)];
          const double gv = gc[i];
          if (gv == 0.0) continue;
          if (gi) {
            igc[s.y0 * w + s.x0] += gv * (1 - s.fy) * (1 - s.fx);
            igc[s.y0 * w + s.x1] += gv * (1 - s.fy) * s.fx;
            igc[s.y1 * w + s.x0] += gv * s.fy * (1 - s.fx);
            igc[s.y1 * w + s.x1] += gv * s.fy * s.fx;
          }
          if (gu) {
            const double v00 = ic[s.y0 * w + s.x0], v01 = ic[s.y0 * w + s.x1];
            const double v10 = ic[s.y1 * w + s.x0], v11 = ic[s.y1 * w + s.x1];
            if (s.in_x) ugx[i] += gv * ((1 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
            if (s.in_y) ugy[i] += gv * ((1 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
          }
        }
      }
    });
  }
  return out;
}

// Nearest-neighbor resampling for label maps; clamps to the border and is
// not differentiable.
inline Tensor warp_nearest(const Tensor& labels, const Tensor& u) {
  ACCAR_CHECK(labels.rank() == 2, "warp_nearest: [H,W] label map expected");
  const int64_t h = labels.shape()[0], w = labels.shape()[1];
  ACCAR_CHECK(u.rank() == 3 && u.shape()[0] == 2 && u.shape()[1] == h && u.shape()[2] == w,
              "warp_nearest: field must be [2,H,W] matching the labels");
  Tensor out = Tensor::zeros({h, w});
  const double* ux = u.val().data();
  const double* uy = u.val().data() + h * w;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      int64_t sx = int64_t(std::llround(double(x) + ux[i]));
      int64_t sy = int64_t(std::llround(double(y) + uy[i]));
      sx = sx < 0 ? 0 : (sx > w - 1 ? w - 1 : sx);
      sy = sy < 0 ? 0 : (sy > h - 1 ? h - 1 : sy);
      out.mutable_val()[size_t(i)] = labels.val()[size_t(sy * w + sx)];
    }
  return out;
}

// Per-pixel det(I + grad u) using forward differences; the last computable
// difference is reused at the final row/column so affine fields stay constant
// to the border.
inline Tensor jacobian_det_map(const Tensor& u) {
  ACCAR_CHECK(u.rank() == 3 && u.shape()[0] == 2, "jacobian_det_map: [2,H,W] expected");
  const int64_t h = u.shape()[1], w = u.shape()[2];
  ACCAR_CHECK(h >= 2 && w >= 2, "jacobian_det_map: field too small");
  const double* ux = u.val().data();
  const double* uy = u.val().data() + h * w;
  Tensor det = Tensor::zeros({h, w});
  double* d = det.mutable_val().data();
  auto dfdx = [w](const double* f, int64_t y, int64_t x) {
    const int64_t xc = x < w - 1 ? x : w - 2;
    return f[y * w + xc + 1] - f[y * w + xc];
  };
  auto dfdy = [h, w](const double* f, int64_t y, int64_t x) {
    const int64_t yc = y < h - 1 ? y : h - 2;
    return f[(yc + 1) * w + x] - f[yc * w + x];
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double a = 1.0 + dfdx(ux, y, x);
      const double b = dfdy(ux, y, x);
      const double cc = dfdx(uy, y, x);
      const double e = 1.0 + dfdy(uy, y, x);
      d[y * w + x] = a * e - b * cc;
    }
  return det;
}

// Percentage of pixels whose Jacobian determinant is negative.
inline double folding_ratio(const Tensor& u) {
  Tensor det = jacobian_det_map(u);
  int64_t neg = 0;
  for (double v : det.val())
    if (v < 0.0) ++neg;
  return 100.0 * double(neg) / double(det.numel());
}

// Mean Euclidean norm of the forward-difference gradient of the det map.
inline double grad_jacobian_mag(const Tensor& u) {
  Tensor det = jacobian_det_map(u);
  const int64_t h = det.shape()[0], w = det.shape()[1];
  const double* d = det.val().data();
  double acc = 0.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t xc = x < w - 1 ? x : w - 2;
      const int64_t yc = y < h - 1 ? y : h - 2;
      const double gx = d[y * w + xc + 1] - d[y * w + xc];
      const double gy = d[(yc + 1) * w + x] - d[yc * w + x];
      acc += std::sqrt(gx * gx + gy * gy);
    }
  return acc / double(h * w);
}

}  // namespace accar
