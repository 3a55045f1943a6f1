#pragma once

// Training objectives: local normalized cross-correlation, diffusion
// smoothness, the variance-map likelihood, the contrast-invariance penalty,
// and the composite registration loss that ties them together.

#include <cmath>

#include "accar/tensor.hpp"
#include "accar/warp.hpp"

namespace accar {

struct LossWeights {
  double lambda1 = 0.3;  // diffusion regularizer
  double lambda2 = 0.2;  // contrast-invariance penalty
  double lambda3 = 0.8;  // LNCC reward
  double beta = 0.5;     // variance-loss exponent

  void validate() const {
    ACCAR_CHECK(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
                "LossWeights: negative loss weight");
    ACCAR_CHECK(beta >= 0.0 && beta <= 1.0, "LossWeights: beta outside [0,1]");
  }
};

// Mean over all fully-contained windows of the squared local correlation
// between a and b. Squaring keeps the score in [0,1] and indifferent to the
// sign of the local intensity relationship; eps guards flat windows.
inline Tensor lncc(const Tensor& a, const Tensor& b, int64_t window = 9, double eps = 1e-5) {
  ACCAR_CHECK(a.rank() == 2 && b.rank() == 2, "lncc: [H,W] images expected");
  ACCAR_CHECK(a.shape() == b.shape(), "lncc: image sizes differ");
  ACCAR_CHECK(window >= 3 && window % 2 == 1, "lncc: odd window >= 3 expected");
  ACCAR_CHECK(window <= a.shape()[0] && window <= a.shape()[1], "lncc: window larger than image");
  const double n = double(window * window);
  Tensor ac = reshape(a, {1, a.shape()[0], a.shape()[1]});
  Tensor bc = reshape(b, {1, b.shape()[0], b.shape()[1]});
  Tensor sa = box_sum(ac, window);
  Tensor sb = box_sum(bc, window);
  Tensor saa = box_sum(mul(ac, ac), window);
  Tensor sbb = box_sum(mul(bc, bc), window);
  Tensor sab = box_sum(mul(ac, bc), window);
  // Centered sums: cov = sum(ab) - sum(a)sum(b)/n, var likewise.
  Tensor cov = sub(sab, scale(mul(sa, sb), 1.0 / n));
  Tensor va = sub(saa, scale(mul(sa, sa), 1.0 / n));
  Tensor vb = sub(sbb, scale(mul(sb, sb), 1.0 / n));
  Tensor r2 = divide(mul(cov, cov), add_scalar(mul(va, vb), eps));
  return reduce_mean(r2);
}

// Mean squared forward difference of the displacement, averaged over
// difference positions per direction with the two vector components summed.
// Penalizing u rather than the full map keeps the identity transform free.
inline Tensor diffusion_reg(const Tensor& u) {
  ACCAR_CHECK(u.rank() == 3 && u.shape()[0] == 2, "diffusion_reg: [2,H,W] field expected");
  const int64_t h = u.shape()[1], w = u.shape()[2];
  ACCAR_CHECK(h >= 2 && w >= 2, "diffusion_reg: field smaller than 2x2");
  const int64_t len = u.numel();
  Tensor flat = reshape(u, {len});
  // Horizontal neighbour sits at +1 in the flat index; sources in the last
  // column would pair across a row boundary, so they are masked out.
  Tensor dx = sub(slice1d(flat, 1, len - 1), slice1d(flat, 0, len - 1));
  Tensor mx = Tensor::zeros({len - 1});
  for (int64_t i = 0; i < len - 1; ++i)
    if (i % w != w - 1) mx.mutable_val()[size_t(i)] = 1.0;
  dx = mul(dx, mx);
  // Vertical neighbour sits at +w; sources in the last row of either
  // component plane would pair across the plane boundary.
  Tensor dy = sub(slice1d(flat, w, len - w), slice1d(flat, 0, len - w));
  Tensor my = Tensor::zeros({len - w});
  for (int64_t i = 0; i < len - w; ++i)
    if (i % (h * w) < (h - 1) * w) my.mutable_val()[size_t(i)] = 1.0;
  dy = mul(dy, my);
  const double nx = double(h * (w - 1));
  const double ny = double((h - 1) * w);
  Tensor tx = scale(reduce_mean(mul(dx, dx)), double(len - 1) / nx);
  Tensor ty = scale(reduce_mean(mul(dy, dy)), double(len - w) / ny);
  return add(tx, ty);
}

// Variance-map objective: per-pixel Gaussian negative log likelihood
// reweighted by the stop-gradient factor sigma^(2*beta). Only log_var
// receives gradient; the residual enters as data.
inline Tensor beta_nll(const Tensor& warped, const Tensor& fixed, const Tensor& log_var,
                       double beta) {
  ACCAR_CHECK(warped.shape() == fixed.shape(), "beta_nll: image sizes differ");
  ACCAR_CHECK(log_var.numel() == warped.numel(), "beta_nll: variance map size mismatch");
  ACCAR_CHECK(beta >= 0.0 && beta <= 1.0, "beta_nll: beta outside [0,1]");
  for (double v : log_var.val())
    if (!std::isfinite(v)) throw NumericError("beta_nll: non-finite log-variance");
  const int64_t n = warped.numel();
  Tensor lv = reshape(log_var, {n});
  Tensor res2, weight;
  {
    NoGrad ng;
    Tensor r = sub(reshape(warped, {n}), reshape(fixed, {n}));
    res2 = mul(r, r);
    weight = exp(scale(lv, beta));
  }
  Tensor per = mul(weight, add(mul(res2, exp(scale(lv, -1.0))), lv));
  return reduce_mean(per);
}

// Pulls the two augmented views of each image toward a shared latent by
// penalizing the projected per-pixel feature difference. Gradient flows
// through both branches and the projection weights.
inline Tensor contrast_invariance(const Tensor& h_m1, const Tensor& h_m2, const Tensor& h_f1,
                                  const Tensor& h_f2, const Tensor& proj_w,
                                  const Tensor& proj_b) {
  ACCAR_CHECK(h_m1.shape() == h_m2.shape() && h_f1.shape() == h_f2.shape() &&
                  h_m1.shape() == h_f1.shape(),
              "contrast_invariance: latent shapes differ");
  Tensor dm = sub(conv2d(h_m1, proj_w, proj_b, 1, 0), conv2d(h_m2, proj_w, proj_b, 1, 0));
  Tensor df = sub(conv2d(h_f1, proj_w, proj_b, 1, 0), conv2d(h_f2, proj_w, proj_b, 1, 0));
  return add(reduce_mean(mul(dm, dm)), reduce_mean(mul(df, df)));
}

// Composite registration objective: variance-weighted pixel similarity plus
// smoothness and contrast-invariance penalties, minus an LNCC reward on the
// warped pair. The variance map enters detached so this loss never trains it.
inline Tensor registration_loss(const Tensor& moving, const Tensor& fixed, const Tensor& u,
                                const Tensor& log_var, const Tensor& h_m1, const Tensor& h_m2,
                                const Tensor& h_f1, const Tensor& h_f2, const LossWeights& wts,
                                const Tensor& proj_w, const Tensor& proj_b) {
  wts.validate();
  ACCAR_CHECK(moving.rank() == 2 && moving.shape() == fixed.shape(),
              "registration_loss: [H,W] image pair expected");
  ACCAR_CHECK(log_var.numel() == moving.numel(), "registration_loss: variance map size mismatch");
  Tensor warped = apply_displacement(moving, u);
  const int64_t n = warped.numel();
  Tensor weight;  // sigma^(2*beta - 2)
  {
    NoGrad ng;
    weight = exp(scale(reshape(log_var, {n}), wts.beta - 1.0));
  }
  Tensor res = sub(reshape(warped, {n}), reshape(fixed, {n}));
  Tensor total = add(reduce_mean(mul(weight, mul(res, res))), scale(diffusion_reg(u), wts.lambda1));
  if (wts.lambda2 != 0.0)
    total = add(total, scale(contrast_invariance(h_m1, h_m2, h_f1, h_f2, proj_w, proj_b),
                             wts.lambda2));
  if (wts.lambda3 != 0.0) total = add(total, scale(lncc(warped, fixed), -wts.lambda3));
  return total;
}

}  // namespace accar
