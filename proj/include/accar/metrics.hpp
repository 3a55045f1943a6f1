#pragma once

// Evaluation metrics: label overlap (Dice), boundary distance (HD95),
// uncertainty sparsification curves, and feature-map RMSD. All metrics are
// plain doubles computed outside the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "accar/tensor.hpp"
#include "accar/warp.hpp"

namespace accar {

// Mean end-point error of a predicted displacement against the field that
// generated the pair. The generating field maps fixed coordinates into the
// moving image, so a perfect prediction composes with it to the identity:
// u(x) + t(x + u(x)) = 0.
inline double end_point_error(const Tensor& u, const Tensor& true_field) {
  ACCAR_CHECK(u.rank() == 3 && u.shape()[0] == 2 && u.shape() == true_field.shape(),
              "end_point_error: [2,H,W] field pair expected");
  const int64_t h = u.shape()[1], w = u.shape()[2], n = h * w;
  NoGrad ng;
  Tensor tx = Tensor::zeros({h, w});
  Tensor ty = Tensor::zeros({h, w});
  for (int64_t i = 0; i < n; ++i) {
    tx.mutable_val()[size_t(i)] = true_field.val()[size_t(i)];
    ty.mutable_val()[size_t(i)] = true_field.val()[size_t(n + i)];
  }
  Tensor wx = apply_displacement(tx, u);
  Tensor wy = apply_displacement(ty, u);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double ex = u.val()[size_t(i)] + wx.val()[size_t(i)];
    const double ey = u.val()[size_t(n + i)] + wy.val()[size_t(i)];
    acc += std::sqrt(ex * ex + ey * ey);
  }
  return acc / double(n);
}

struct SparsificationCurve {
  std::vector<double> fractions_removed;  // strictly increasing, in [0,1)
  std::vector<double> remaining_mse;      // ranked by the variance estimate
  std::vector<double> oracle_mse;         // ranked by the true squared error
};

inline double dice(const Tensor& a, const Tensor& b, int64_t label) {
  ACCAR_CHECK(a.shape() == b.shape(), "dice: shape mismatch");
  int64_t na = 0, nb = 0, both = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool ia = int64_t(a.val()[size_t(i)]) == label;
    const bool ib = int64_t(b.val()[size_t(i)]) == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

namespace detail {

// Pixels of the label with a 4-neighbor of another label; anything outside
// the image counts as another label, so a set touching the border has a
// boundary there too.
inline std::vector<std::pair<int64_t, int64_t>> label_boundary(const Tensor& seg, int64_t label) {
  ACCAR_CHECK(seg.rank() == 2, "label_boundary: [H,W] mask expected");
  const int64_t h = seg.shape()[0], w = seg.shape()[1];
  std::vector<std::pair<int64_t, int64_t>> out;
  auto at = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return false;
    return int64_t(seg.val()[size_t(y * w + x)]) == label;
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!at(y, x)) continue;
      if (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1))
        out.emplace_back(y, x);
    }
  return out;
}

// Linear-interpolated percentile of an unsorted sample (rank q*(n-1)).
inline double percentile(std::vector<double> v, double q) {
  ACCAR_CHECK(!v.empty(), "percentile: empty sample");
  std::sort(v.begin(), v.end());
  const double rank = q * double(v.size() - 1);
  const auto lo = size_t(rank);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = rank - double(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline std::vector<double> directed_distances(const std::vector<std::pair<int64_t, int64_t>>& from,
                                              const std::vector<std::pair<int64_t, int64_t>>& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dy = double(p.first - q.first), dx = double(p.second - q.second);
      best = std::min(best, dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace detail

// 95th percentile Hausdorff distance between label boundaries, symmetrized
// as the max of the two directed percentiles.
inline double hd95(const Tensor& a, const Tensor& b, int64_t label) {
  ACCAR_CHECK(a.shape() == b.shape(), "hd95: shape mismatch");
  const auto ba = detail::label_boundary(a, label);
  const auto bb = detail::label_boundary(b, label);
  ACCAR_CHECK(!ba.empty() && !bb.empty(), "hd95: label absent from one of the masks");
  const double pa = detail::percentile(detail::directed_distances(ba, bb), 0.95);
  const double pb = detail::percentile(detail::directed_distances(bb, ba), 0.95);
  return std::max(pa, pb);
}

// Removes pixels from highest to lowest variance (ties by ascending index)
// and tracks the MSE of what remains; the oracle ranks by the squared error
// itself. fractions_removed[i] = i/n_steps, so the full-removal point is
// never evaluated.
inline SparsificationCurve sparsification_curve(const Tensor& sq_error, const Tensor& variance,
                                                int64_t n_steps) {
  ACCAR_CHECK(sq_error.shape() == variance.shape(), "sparsification_curve: shape mismatch");
  ACCAR_CHECK(n_steps >= 2, "sparsification_curve: n_steps must be at least 2");
  const int64_t n = sq_error.numel();
  ACCAR_CHECK(n >= 1, "sparsification_curve: empty input");

  auto ranking = [n](const std::vector<double>& key) {
    std::vector<int64_t> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), int64_t(0));
    std::stable_sort(order.begin(), order.end(), [&](int64_t i, int64_t j) {
      return key[size_t(i)] > key[size_t(j)];
    });
    return order;
  };
  auto partial_means = [&](const std::vector<int64_t>& order) {
    // suffix[k] = mean of sq_error over pixels after removing the first k.
    std::vector<double> suffix(size_t(n + 1), 0.0);
    double acc = 0.0;
    for (int64_t k = n - 1; k >= 0; --k) {
      acc += sq_error.val()[size_t(order[size_t(k)])];
      suffix[size_t(k)] = acc / double(n - k);
    }
    return suffix;
  };

  const auto by_var = partial_means(ranking(variance.val()));
  const auto by_err = partial_means(ranking(sq_error.val()));
  SparsificationCurve curve;
  for (int64_t i = 0; i < n_steps; ++i) {
    const int64_t removed = i * n / n_steps;
    curve.fractions_removed.push_back(double(i) / double(n_steps));
    curve.remaining_mse.push_back(by_var[size_t(removed)]);
    curve.oracle_mse.push_back(by_err[size_t(removed)]);
  }
  return curve;
}

// Trapezoidal area between the estimate curve and its oracle; zero iff the
// variance ranks pixels exactly like the true error at every step.
inline double sparsification_error(const SparsificationCurve& curve) {
  const size_t n = curve.fractions_removed.size();
  ACCAR_CHECK(n >= 2 && curve.remaining_mse.size() == n && curve.oracle_mse.size() == n,
              "sparsification_error: malformed curve");
  double area = 0.0;
  for (size_t i = 1; i < n; ++i) {
    const double d0 = curve.remaining_mse[i - 1] - curve.oracle_mse[i - 1];
    const double d1 = curve.remaining_mse[i] - curve.oracle_mse[i];
    area += 0.5 * (d0 + d1) * (curve.fractions_removed[i] - curve.fractions_removed[i - 1]);
  }
  return area;
}

// RMSD over every ordered pair of feature maps (n*(n-1) values; mirrored
// pairs are redundant but reported to match the evaluation protocol).
inline std::pair<std::vector<double>, double> feature_rmsd(const std::vector<Tensor>& features) {
  ACCAR_CHECK(features.size() >= 2, "feature_rmsd: need at least two feature maps");
  for (const Tensor& f : features)
    ACCAR_CHECK(f.shape() == features.front().shape(), "feature_rmsd: shape mismatch");
  std::vector<double> pair_rmsds;
  const size_t n = features.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double acc = 0.0;
      const int64_t m = features[i].numel();
      for (int64_t k = 0; k < m; ++k) {
        const double d = features[i].val()[size_t(k)] - features[j].val()[size_t(k)];
        acc += d * d;
      }
      pair_rmsds.push_back(std::sqrt(acc / double(m)));
    }
  const double mean =
      std::accumulate(pair_rmsds.begin(), pair_rmsds.end(), 0.0) / double(pair_rmsds.size());
  return {pair_rmsds, mean};
}

}  // namespace accar
