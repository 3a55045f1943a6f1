#pragma once

// 2D discrete wavelet transforms for the conditioning pyramid, plus an FFT
// low-pass alternative. Haar uses the averaging normalization so LL keeps the
// input intensity range (LL of a constant image is that constant). Daubechies
// db2 and biorthogonal bior2.2 run as periodized lifting schemes, which keeps
// every band exactly half-size and reconstruction exact; their LL bands are
// rescaled to the same unit DC gain.

#include <cmath>
#include <cstdint>
#include <vector>

#include <fftw3.h>

#include "accar/common.hpp"
#include "accar/tensor.hpp"

namespace accar {

enum class WaveletFamily { haar, daubechies, biorthogonal };

struct WaveletBands {
  Tensor ll, lh, hl, hh;  // lh = low horizontal / high vertical, hl the reverse
};

namespace detail {

// In-place 1D analysis on x[0..n), n even. Writes lowpass to low[0..n/2),
// highpass to high[0..n/2). Periodic boundary for the lifting families.
inline void dwt1d(const double* x, int64_t n, WaveletFamily fam, double* low, double* high) {
  const int64_t m = n / 2;
  switch (fam) {
    case WaveletFamily::haar:
      for (int64_t k = 0; k < m; ++k) {
        low[k] = 0.5 * (x[2 * k] + x[2 * k + 1]);
        high[k] = 0.5 * (x[2 * k] - x[2 * k + 1]);
      }
      return;
    case WaveletFamily::biorthogonal: {
      // CDF 5/3 lifting: predict then update.
      for (int64_t k = 0; k < m; ++k) {
        const double s_next = x[2 * ((k + 1) % m)];
        high[k] = x[2 * k + 1] - 0.5 * (x[2 * k] + s_next);
      }
      for (int64_t k = 0; k < m; ++k) {
        const double d_prev = high[(k + m - 1) % m];
        low[k] = x[2 * k] + 0.25 * (d_prev + high[k]);
      }
      return;
    }
    case WaveletFamily::daubechies: {
      static const double r3 = std::sqrt(3.0);
      std::vector<double> s1(size_t(m), 0.0), d1(size_t(m), 0.0);
      for (int64_t k = 0; k < m; ++k) s1[size_t(k)] = x[2 * k] + r3 * x[2 * k + 1];
      for (int64_t k = 0; k < m; ++k) {
        const double s1_prev = s1[size_t((k + m - 1) % m)];
        d1[size_t(k)] = x[2 * k + 1] - 0.25 * r3 * s1[size_t(k)] - 0.25 * (r3 - 2.0) * s1_prev;
      }
      // unit-DC normalization folded into the final scales
      const double sl = 0.5 * (r3 - 1.0), sh = 0.5 * (r3 + 1.0);
      for (int64_t k = 0; k < m; ++k) {
        low[k] = sl * (s1[size_t(k)] - d1[size_t((k + 1) % m)]);
        high[k] = sh * d1[size_t(k)];
      }
      return;
    }
  }
}

inline void idwt1d(const double* low, const double* high, int64_t m, WaveletFamily fam, double* x) {
  switch (fam) {
    case WaveletFamily::haar:
      for (int64_t k = 0; k < m; ++k) {
        x[2 * k] = low[k] + high[k];
        x[2 * k + 1] = low[k] - high[k];
      }
      return;
    case WaveletFamily::biorthogonal: {
      for (int64_t k = 0; k < m; ++k) {
        const double d_prev = high[(k + m - 1) % m];
        x[2 * k] = low[k] - 0.25 * (d_prev + high[k]);
      }
      for (int64_t k = 0; k < m; ++k) {
        const double s_next = x[2 * ((k + 1) % m)];
        x[2 * k + 1] = high[k] + 0.5 * (x[2 * k] + s_next);
      }
      return;
    }
    case WaveletFamily::daubechies: {
      static const double r3 = std::sqrt(3.0);
      const double sl = 0.5 * (r3 - 1.0), sh = 0.5 * (r3 + 1.0);
      std::vector<double> s1(size_t(m), 0.0), d1(size_t(m), 0.0);
      for (int64_t k = 0; k < m; ++k) d1[size_t(k)] = high[k] / sh;
      for (int64_t k = 0; k < m; ++k) s1[size_t(k)] = low[k] / sl + d1[size_t((k + 1) % m)];
      for (int64_t k = 0; k < m; ++k) {
        const double s1_prev = s1[size_t((k + m - 1) % m)];
        x[2 * k + 1] = d1[size_t(k)] + 0.25 * r3 * s1[size_t(k)] + 0.25 * (r3 - 2.0) * s1_prev;
        x[2 * k] = s1[size_t(k)] - r3 * x[2 * k + 1];
      }
      return;
    }
  }
}

// Replicate-pad the trailing row/column when a dimension is odd.
inline Tensor pad_to_even(const Tensor& img) {
  const int64_t h = img.shape()[0], w = img.shape()[1];
  const int64_t h2 = h + (h % 2), w2 = w + (w % 2);
  if (h2 == h && w2 == w) return img;
  Tensor out = Tensor::zeros({h2, w2});
  for (int64_t y = 0; y < h2; ++y)
    for (int64_t x = 0; x < w2; ++x)
      out.mutable_val()[y * w2 + x] = img.val()[std::min(y, h - 1) * w + std::min(x, w - 1)];
  return out;
}

}  // namespace detail

inline WaveletBands dwt2(const Tensor& image, WaveletFamily fam = WaveletFamily::haar) {
  ACCAR_CHECK(image.rank() == 2 && image.numel() > 0, "dwt2: non-empty [H,W] image expected");
  Tensor img = detail::pad_to_even(image);
  const int64_t h = img.shape()[0], w = img.shape()[1];
  const int64_t mh = h / 2, mw = w / 2;

  if (fam == WaveletFamily::haar) {
    // Direct block form so LL is bitwise identical to 2x2 average pooling.
    Tensor ll = Tensor::zeros({mh, mw}), lh = Tensor::zeros({mh, mw});
    Tensor hl = Tensor::zeros({mh, mw}), hh = Tensor::zeros({mh, mw});
    const double* p = img.val().data();
    for (int64_t y = 0; y < mh; ++y)
      for (int64_t x = 0; x < mw; ++x) {
        const double a = p[(2 * y) * w + 2 * x], b = p[(2 * y) * w + 2 * x + 1];
        const double c = p[(2 * y + 1) * w + 2 * x], d = p[(2 * y + 1) * w + 2 * x + 1];
        ll.mutable_val()[y * mw + x] = (a + b + c + d) * 0.25;
        hl.mutable_val()[y * mw + x] = (a - b + c - d) * 0.25;
        lh.mutable_val()[y * mw + x] = (a + b - c - d) * 0.25;
        hh.mutable_val()[y * mw + x] = (a - b - c + d) * 0.25;
      }
    return {ll, lh, hl, hh};
  }

  // rows: [L | H] halves
  std::vector<double> rows(size_t(h * w));
  for (int64_t y = 0; y < h; ++y)
    detail::dwt1d(img.val().data() + y * w, w, fam, rows.data() + y * w, rows.data() + y * w + mw);

  Tensor ll = Tensor::zeros({mh, mw}), lh = Tensor::zeros({mh, mw});
  Tensor hl = Tensor::zeros({mh, mw}), hh = Tensor::zeros({mh, mw});
  std::vector<double> col(size_t(h), 0.0), lo(size_t(mh), 0.0), hi(size_t(mh), 0.0);
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) col[size_t(y)] = rows[size_t(y * w + x)];
    detail::dwt1d(col.data(), h, fam, lo.data(), hi.data());
    const bool left = x < mw;  // row-lowpass half
    const int64_t bx = left ? x : x - mw;
    for (int64_t y = 0; y < mh; ++y) {
      if (left) {
        ll.mutable_val()[y * mw + bx] = lo[size_t(y)];
        lh.mutable_val()[y * mw + bx] = hi[size_t(y)];
      } else {
        hl.mutable_val()[y * mw + bx] = lo[size_t(y)];
        hh.mutable_val()[y * mw + bx] = hi[size_t(y)];
      }
    }
  }
  return {ll, lh, hl, hh};
}

inline Tensor idwt2(const WaveletBands& b, WaveletFamily fam = WaveletFamily::haar) {
  ACCAR_CHECK(b.ll.rank() == 2, "idwt2: rank-2 bands expected");
  const Shape s = b.ll.shape();
  ACCAR_CHECK(b.lh.shape() == s && b.hl.shape() == s && b.hh.shape() == s, "idwt2: band shape mismatch");
  const int64_t mh = s[0], mw = s[1];
  const int64_t h = 2 * mh, w = 2 * mw;

  if (fam == WaveletFamily::haar) {
    Tensor out = Tensor::zeros({h, w});
    double* p = out.mutable_val().data();
    for (int64_t y = 0; y < mh; ++y)
      for (int64_t x = 0; x < mw; ++x) {
        const double ll = b.ll.val()[y * mw + x], hl = b.hl.val()[y * mw + x];
        const double lh = b.lh.val()[y * mw + x], hh = b.hh.val()[y * mw + x];
        p[(2 * y) * w + 2 * x] = ll + hl + lh + hh;
        p[(2 * y) * w + 2 * x + 1] = ll - hl + lh - hh;
        p[(2 * y + 1) * w + 2 * x] = ll + hl - lh - hh;
        p[(2 * y + 1) * w + 2 * x + 1] = ll - hl - lh + hh;
      }
    return out;
  }

  // undo the column pass, rebuilding the [L | H] row-transformed image
  std::vector<double> rows(size_t(h * w));
  std::vector<double> lo(size_t(mh), 0.0), hi(size_t(mh), 0.0), col(size_t(h), 0.0);
  for (int64_t x = 0; x < w; ++x) {
    const bool left = x < mw;
    const int64_t bx = left ? x : x - mw;
    for (int64_t y = 0; y < mh; ++y) {
      lo[size_t(y)] = left ? b.ll.val()[y * mw + bx] : b.hl.val()[y * mw + bx];
      hi[size_t(y)] = left ? b.lh.val()[y * mw + bx] : b.hh.val()[y * mw + bx];
    }
    detail::idwt1d(lo.data(), hi.data(), mh, fam, col.data());
    for (int64_t y = 0; y < h; ++y) rows[size_t(y * w + x)] = col[size_t(y)];
  }

  Tensor out = Tensor::zeros({h, w});
  for (int64_t y = 0; y < h; ++y)
    detail::idwt1d(rows.data() + y * w, rows.data() + y * w + mw, mw, fam, out.mutable_val().data() + y * w);
  return out;
}

// LL_0 = image, LL_{i+1} = LL band of dwt2(LL_i); returns levels+1 images.
inline std::vector<Tensor> condition_pyramid(const Tensor& image, int levels,
                                             WaveletFamily fam = WaveletFamily::haar) {
  ACCAR_CHECK(image.rank() == 2, "condition_pyramid: [H,W] image expected");
  ACCAR_CHECK(levels >= 0, "condition_pyramid: negative level count");
  const int64_t min_ext = std::min(image.shape()[0], image.shape()[1]);
  ACCAR_CHECK((int64_t(1) << levels) <= min_ext, "condition_pyramid: too many levels for image size");
  std::vector<Tensor> py;
  py.push_back(image);
  for (int i = 0; i < levels; ++i) py.push_back(dwt2(py.back(), fam).ll);
  return py;
}

// Haar LL is exactly 2x2 average pooling; exposed for the FFT pathway.
inline Tensor average_pool2x2(const Tensor& image) {
  return dwt2(image, WaveletFamily::haar).ll;
}

// Zero everything outside the centered low-frequency box whose half-width is
// floor(keep_fraction * N/2) per dimension, inverse transform, then 2x2
// average-pool so the result matches the DWT LL size at the same level.
inline Tensor fft_lowpass(const Tensor& image, double keep_fraction) {
  ACCAR_CHECK(image.rank() == 2, "fft_lowpass: [H,W] image expected");
  ACCAR_CHECK(keep_fraction > 0.0 && keep_fraction <= 1.0, "fft_lowpass: keep_fraction in (0,1]");
  const int64_t h = image.shape()[0], w = image.shape()[1];
  fftw_complex* buf = fftw_alloc_complex(size_t(h * w));
  fftw_complex* freq = fftw_alloc_complex(size_t(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    buf[i][0] = image.val()[i];
    buf[i][1] = 0.0;
  }
  fftw_plan fwd = fftw_plan_dft_2d(int(h), int(w), buf, freq, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(fwd);
  fftw_destroy_plan(fwd);

  const int64_t cut_y = int64_t(keep_fraction * double(h) / 2.0);
  const int64_t cut_x = int64_t(keep_fraction * double(w) / 2.0);
  for (int64_t ky = 0; ky < h; ++ky) {
    const int64_t fy = ky <= h / 2 ? ky : ky - h;
    for (int64_t kx = 0; kx < w; ++kx) {
      const int64_t fx = kx <= w / 2 ? kx : kx - w;
      if (std::llabs(fy) > cut_y || std::llabs(fx) > cut_x) {
        freq[ky * w + kx][0] = 0.0;
        freq[ky * w + kx][1] = 0.0;
      }
    }
  }

  fftw_plan bwd = fftw_plan_dft_2d(int(h), int(w), freq, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(bwd);
  fftw_destroy_plan(bwd);
  Tensor filtered = Tensor::zeros({h, w});
  const double scale = 1.0 / double(h * w);
  for (int64_t i = 0; i < h * w; ++i) filtered.mutable_val()[i] = buf[i][0] * scale;
  fftw_free(buf);
  fftw_free(freq);
  return average_pool2x2(filtered);
}

}  // namespace accar
