#pragma once

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// Operations record themselves on the thread-local active Tape in execution
// order, which is already a topological order, so the backward pass is a
// single reverse sweep. Values are written once at construction; gradients
// accumulate additively into leaf and intermediate buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "accar/common.hpp"

namespace accar {

struct TensorData {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // allocated lazily on first gradient touch
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return filled(std::move(s), 0.0, requires_grad);
  }

  static Tensor filled(Shape s, double v, bool requires_grad = false) {
    auto d = std::make_shared<TensorData>();
    d->val.assign(size_t(shape_numel(s)), v);
    d->shape = std::move(s);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor from(Shape s, std::vector<double> v, bool requires_grad = false) {
    ACCAR_CHECK(int64_t(v.size()) == shape_numel(s), "tensor data size does not match shape " + shape_str(s));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(s);
    d->val = std::move(v);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t rank() const { return int64_t(d_->shape.size()); }
  int64_t numel() const { return int64_t(d_->val.size()); }
  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) const { d_->requires_grad = rg; }

  const std::vector<double>& val() const { return d_->val; }
  std::vector<double>& mutable_val() const { return d_->val; }
  double item() const {
    ACCAR_CHECK(numel() == 1, "item() needs a single-element tensor");
    return d_->val[0];
  }

  const std::vector<double>& grad() const { return d_->grad; }
  bool has_grad() const { return !d_->grad.empty(); }
  void ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->val.size(), 0.0);
  }
  void zero_grad() const { d_->grad.clear(); }

  // Same values, cut off from the graph.
  Tensor detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->val = d_->val;
    d->requires_grad = false;
    return Tensor(std::move(d));
  }

  Tensor clone(bool requires_grad) const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad);
    return t;
  }

  TensorData* data_ptr() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Scoped gradient-tracking switch; ops run while disabled produce plain values.
class NoGrad {
 public:
  NoGrad() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

class Tape {
 public:
  Tape() : prev_(active_ptr()) { active_ptr() = this; }
  ~Tape() { active_ptr() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_ptr(); }

  void record(std::function<void()> backward_fn, std::vector<Tensor> outs) {
    entries_.push_back({std::move(outs), std::move(backward_fn)});
  }

  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. A second
  // sweep without reset() is an error because gradients would double-count.
  // Entries none of whose outputs received gradient are off the loss path.
  void backward(Tensor loss) {
    ACCAR_CHECK(!consumed_, "backward() called twice on the same tape; call reset() first");
    ACCAR_CHECK(loss.numel() == 1, "backward() needs a scalar loss");
    consumed_ = true;
    loss.ensure_grad();
    loss.data_ptr()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      bool live = false;
      for (const Tensor& o : it->outs)
        if (o.has_grad()) live = true;
      if (live) it->fn();
    }
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::vector<Tensor> outs;
    std::function<void()> fn;
  };

  static Tape*& active_ptr() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Entry> entries_;
  bool consumed_ = false;
  Tape* prev_;
};

namespace detail {

inline bool tracking(std::initializer_list<const Tensor*> parents) {
  if (!grad_mode() || Tape::active() == nullptr) return false;
  for (const Tensor* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

inline void mark_and_record(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(fn), {out});
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  ACCAR_CHECK(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                          " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] + b.val()[i];
  if (detail::tracking({&a, &b})) {
    detail::mark_and_record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) b.data_ptr()->grad[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] - b.val()[i];
  if (detail::tracking({&a, &b})) {
    detail::mark_and_record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) b.data_ptr()->grad[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] * b.val()[i];
  if (detail::tracking({&a, &b})) {
    detail::mark_and_record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i] * b.val()[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) b.data_ptr()->grad[i] += g[i] * a.val()[i];
      }
    });
  }
  return out;
}

inline Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] / b.val()[i];
  if (detail::tracking({&a, &b})) {
    detail::mark_and_record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i] / b.val()[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
          b.data_ptr()->grad[i] -= g[i] * a.val()[i] / (b.val()[i] * b.val()[i]);
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] * c;
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out, c]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i] * c;
    });
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = a.val()[i] + c;
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i];
    });
  }
  return out;
}

inline Tensor exp(const Tensor& a) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) out.mutable_val()[i] = std::exp(a.val()[i]);
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i] * out.val()[i];
    });
  }
  return out;
}

// Subgradient at exactly 0 is taken as `slope`.
inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
  const int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double x = a.val()[i];
    out.mutable_val()[i] = x > 0.0 ? x : slope * x;
  }
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out, slope]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i)
        a.data_ptr()->grad[i] += g[i] * (a.val()[i] > 0.0 ? 1.0 : slope);
    });
  }
  return out;
}

inline Tensor detach(const Tensor& a) { return a.detach(); }

// ---- shape plumbing ---------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape s) {
  ACCAR_CHECK(shape_numel(s) == a.numel(), "reshape: element count mismatch");
  Tensor out = Tensor::from(std::move(s), a.val());
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[i] += g[i];
    });
  }
  return out;
}

inline Tensor slice1d(const Tensor& a, int64_t start, int64_t len) {
  ACCAR_CHECK(a.rank() == 1, "slice1d: rank-1 tensor expected");
  ACCAR_CHECK(start >= 0 && len >= 0 && start + len <= a.numel(), "slice1d: out of range");
  Tensor out = Tensor::zeros({len});
  for (int64_t i = 0; i < len; ++i) out.mutable_val()[i] = a.val()[start + i];
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out, start]() mutable {
      const auto& g = out.grad();
      a.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) a.data_ptr()->grad[start + int64_t(i)] += g[i];
    });
  }
  return out;
}

// Concatenate [C_i, H, W] maps along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  ACCAR_CHECK(!parts.empty(), "concat_channels: no inputs");
  const int64_t h = parts[0].shape()[1], w = parts[0].shape()[2];
  int64_t ctot = 0;
  for (const Tensor& p : parts) {
    ACCAR_CHECK(p.rank() == 3, "concat_channels: rank-3 tensors expected");
    ACCAR_CHECK(p.shape()[1] == h && p.shape()[2] == w, "concat_channels: spatial size mismatch");
    ctot += p.shape()[0];
  }
  Tensor out = Tensor::zeros({ctot, h, w});
  int64_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.val().begin(), p.val().end(), out.mutable_val().begin() + off);
    off += p.numel();
  }
  bool track = false;
  for (const Tensor& p : parts)
    if (detail::tracking({&p})) track = true;
  if (track) {
    std::vector<Tensor> parents = parts;
    detail::mark_and_record(out, [parents, out]() mutable {
      const auto& g = out.grad();
      int64_t off = 0;
      for (Tensor& p : parents) {
        const int64_t n = p.numel();
        if (p.requires_grad()) {
          p.ensure_grad();
          for (int64_t i = 0; i < n; ++i) p.data_ptr()->grad[i] += g[size_t(off + i)];
        }
        off += n;
      }
    });
  }
  return out;
}

// ---- reductions -------------------------------------------------------------

inline Tensor reduce_mean(const Tensor& a) {
  const int64_t n = a.numel();
  ACCAR_CHECK(n > 0, "reduce_mean: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a.val()[i];
  Tensor out = Tensor::scalar(s / double(n));
  if (detail::tracking({&a})) {
    detail::mark_and_record(out, [a, out, n]() mutable {
      const double g = out.grad()[0] / double(n);
      a.ensure_grad();
      for (int64_t i = 0; i < n; ++i) a.data_ptr()->grad[i] += g;
    });
  }
  return out;
}

// ---- dense / conv -----------------------------------------------------------

// y = W x + b with W [out,in], x [in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  ACCAR_CHECK(w.rank() == 2 && x.rank() == 1 && b.rank() == 1, "linear: x[in], W[out,in], b[out]");
  const int64_t out_n = w.shape()[0], in_n = w.shape()[1];
  ACCAR_CHECK(x.numel() == in_n && b.numel() == out_n, "linear: dimension mismatch");
  Tensor out = Tensor::zeros({out_n});
  for (int64_t o = 0; o < out_n; ++o) {
    double s = b.val()[o];
    const double* wrow = w.val().data() + o * in_n;
    for (int64_t i = 0; i < in_n; ++i) s += wrow[i] * x.val()[i];
    out.mutable_val()[o] = s;
  }
  if (detail::tracking({&w, &x, &b})) {
    detail::mark_and_record(out, [w, x, b, out, out_n, in_n]() mutable {
      const auto& g = out.grad();
      if (w.requires_grad()) {
        w.ensure_grad();
        for (int64_t o = 0; o < out_n; ++o)
          for (int64_t i = 0; i < in_n; ++i) w.data_ptr()->grad[o * in_n + i] += g[o] * x.val()[i];
      }
      if (x.requires_grad()) {
        x.ensure_grad();
        for (int64_t o = 0; o < out_n; ++o) {
          const double* wrow = w.val().data() + o * in_n;
          for (int64_t i = 0; i < in_n; ++i) x.data_ptr()->grad[i] += g[o] * wrow[i];
        }
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (int64_t o = 0; o < out_n; ++o) b.data_ptr()->grad[o] += g[o];
      }
    });
  }
  return out;
}

// Cross-correlation: out[o,y,x] = b[o] + sum_{c,ky,kx} w[o,c,ky,kx] * in[c, y*s+ky-p, x*s+kx-p].
inline Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad) {
  ACCAR_CHECK(in.rank() == 3 && w.rank() == 4 && b.rank() == 1, "conv2d: in[C,H,W], w[O,C,k,k], b[O]");
  const int64_t ci = in.shape()[0], h = in.shape()[1], wd = in.shape()[2];
  const int64_t co = w.shape()[0], k = w.shape()[2];
  ACCAR_CHECK(w.shape()[1] == ci && w.shape()[3] == k, "conv2d: weight shape mismatch");
  ACCAR_CHECK(b.numel() == co, "conv2d: bias size mismatch");
  ACCAR_CHECK(k == 1 || k == 3, "conv2d: kernel must be 1 or 3");
  ACCAR_CHECK(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  ACCAR_CHECK(pad == 0 || pad == k / 2, "conv2d: padding must be 0 or k/2");
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (wd + 2 * pad - k) / stride + 1;
  ACCAR_CHECK(oh > 0 && ow > 0, "conv2d: empty output");

  Tensor out = Tensor::zeros({co, oh, ow});
  {
    double* ov = out.mutable_val().data();
    const double* iv = in.val().data();
    const double* wv = w.val().data();
    for (int64_t o = 0; o < co; ++o) {
      double* oc = ov + o * oh * ow;
      const double bo = b.val()[o];
      for (int64_t i = 0; i < oh * ow; ++i) oc[i] = bo;
      for (int64_t c = 0; c < ci; ++c) {
        const double* icell = iv + c * h * wd;
        const double* wcell = wv + (o * ci + c) * k * k;
        for (int64_t ky = 0; ky < k; ++ky) {
          for (int64_t kx = 0; kx < k; ++kx) {
            const double wk = wcell[ky * k + kx];
            if (wk == 0.0) continue;
            // valid output column range for this tap
            const int64_t ox_lo = std::max<int64_t>(0, (pad - kx + stride - 1) / stride);
            const int64_t ox_hi = std::min(ow - 1, (wd - 1 - kx + pad) / stride);
            for (int64_t oy = 0; oy < oh; ++oy) {
              const int64_t iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const double* irow = icell + iy * wd;
              double* orow = oc + oy * ow;
              int64_t ix = ox_lo * stride + kx - pad;
              for (int64_t ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) orow[ox] += wk * irow[ix];
            }
          }
        }
      }
    }
  }

  if (detail::tracking({&in, &w, &b})) {
    detail::mark_and_record(out, [in, w, b, out, ci, h, wd, co, k, stride, pad, oh, ow]() mutable {
      const double* g = out.grad().data();
      if (b.requires_grad()) {
        b.ensure_grad();
        for (int64_t o = 0; o < co; ++o) {
          double s = 0.0;
          const double* gc = g + o * oh * ow;
          for (int64_t i = 0; i < oh * ow; ++i) s += gc[i];
          b.data_ptr()->grad[o] += s;
        }
      }
      const bool gi = in.requires_grad(), gw = w.requires_grad();
      if (!gi && !gw) return;
      if (gi) in.ensure_grad();
      if (gw) w.ensure_grad();
      double* ig = gi ? in.data_ptr()->grad.data() : nullptr;
      double* wg = gw ? w.data_ptr()->grad.data() : nullptr;
      const double* iv = in.val().data();
      const double* wv = w.val().data();
      for (int64_t o = 0; o < co; ++o) {
        const double* gc = g + o * oh * ow;
        for (int64_t c = 0; c < ci; ++c) {
          const double* icell = iv + c * h * wd;
          const double* wcell = wv + (o * ci + c) * k * k;
          double* igcell = gi ? ig + c * h * wd : nullptr;
          double* wgcell = gw ? wg + (o * ci + c) * k * k : nullptr;
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const double wk = wcell[ky * k + kx];
              double wacc = 0.0;
              const int64_t ox_lo = std::max<int64_t>(0, (pad - kx + stride - 1) / stride);
              const int64_t ox_hi = std::min(ow - 1, (wd - 1 - kx + pad) / stride);
              for (int64_t oy = 0; oy < oh; ++oy) {
                const int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                const double* grow = gc + oy * ow;
                const double* irow = icell + iy * wd;
                double* igrow = gi ? igcell + iy * wd : nullptr;
                int64_t ix = ox_lo * stride + kx - pad;
                if (gi && gw) {
                  for (int64_t ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) {
                    igrow[ix] += wk * grow[ox];
                    wacc += irow[ix] * grow[ox];
                  }
                } else if (gi) {
                  for (int64_t ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) igrow[ix] += wk * grow[ox];
                } else {
                  for (int64_t ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) wacc += irow[ix] * grow[ox];
                }
              }
              if (gw) wgcell[ky * k + kx] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- normalization ----------------------------------------------------------

struct InstanceNormOut {
  Tensor y;      // [C,H,W] normalized with the eps-guarded denominator
  Tensor mu;     // [C] population mean
  Tensor sigma;  // [C] population std (exactly 0 for a constant channel)
};

inline InstanceNormOut instance_normalize(const Tensor& x, double eps = 1e-8) {
  ACCAR_CHECK(x.rank() == 3, "instance_normalize: [C,H,W] expected");
  ACCAR_CHECK(eps > 0.0, "instance_normalize: eps must be positive");
  const int64_t c = x.shape()[0], n = x.shape()[1] * x.shape()[2];
  Tensor y = Tensor::zeros(x.shape());
  Tensor mu = Tensor::zeros({c});
  Tensor sigma = Tensor::zeros({c});
  std::vector<double> denom(size_t(c), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* xc = x.val().data() + ch * n;
    double m = 0.0;
    for (int64_t i = 0; i < n; ++i) m += xc[i];
    m /= double(n);
    double v = 0.0;
    for (int64_t i = 0; i < n; ++i) v += (xc[i] - m) * (xc[i] - m);
    v /= double(n);
    const double d = std::sqrt(v + eps);
    denom[size_t(ch)] = d;
    mu.mutable_val()[ch] = m;
    sigma.mutable_val()[ch] = std::sqrt(v);
    double* yc = y.mutable_val().data() + ch * n;
    for (int64_t i = 0; i < n; ++i) yc[i] = (xc[i] - m) / d;
  }
  if (detail::tracking({&x})) {
    auto fn = [x, y, mu, sigma, denom, c, n]() mutable {
      x.ensure_grad();
      const bool has_y = y.has_grad(), has_mu = mu.has_grad(), has_sd = sigma.has_grad();
      for (int64_t ch = 0; ch < c; ++ch) {
        double* xg = x.data_ptr()->grad.data() + ch * n;
        const double* yc = y.val().data() + ch * n;
        const double d = denom[size_t(ch)];
        if (has_y) {
          const double* gy = y.grad().data() + ch * n;
          double mg = 0.0, mgy = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            mg += gy[i];
            mgy += gy[i] * yc[i];
          }
          mg /= double(n);
          mgy /= double(n);
          for (int64_t i = 0; i < n; ++i) xg[i] += (gy[i] - mg - yc[i] * mgy) / d;
        }
        if (has_mu) {
          const double gm = mu.grad()[ch] / double(n);
          for (int64_t i = 0; i < n; ++i) xg[i] += gm;
        }
        if (has_sd && sigma.val()[ch] > 0.0) {
          const double gs = sigma.grad()[ch] / (double(n) * sigma.val()[ch]);
          const double m = mu.val()[ch];
          const double* xc = x.val().data() + ch * n;
          for (int64_t i = 0; i < n; ++i) xg[i] += gs * (xc[i] - m);
        }
      }
    };
    // Single entry with three outputs: all consumers sit later on the tape,
    // so every incoming grad is final when the entry fires.
    y.set_requires_grad(true);
    mu.set_requires_grad(true);
    sigma.set_requires_grad(true);
    Tape::active()->record(fn, {y, mu, sigma});
  }
  return {y, mu, sigma};
}

// out[c,:,:] = x[c,:,:] * alpha[c] + beta[c]
inline Tensor channel_affine(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  ACCAR_CHECK(x.rank() == 3 && alpha.rank() == 1 && beta.rank() == 1, "channel_affine: x[C,H,W], alpha[C], beta[C]");
  const int64_t c = x.shape()[0], n = x.shape()[1] * x.shape()[2];
  ACCAR_CHECK(alpha.numel() == c && beta.numel() == c, "channel_affine: channel count mismatch");
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double a = alpha.val()[ch], bt = beta.val()[ch];
    const double* xc = x.val().data() + ch * n;
    double* oc = out.mutable_val().data() + ch * n;
    for (int64_t i = 0; i < n; ++i) oc[i] = xc[i] * a + bt;
  }
  if (detail::tracking({&x, &alpha, &beta})) {
    detail::mark_and_record(out, [x, alpha, beta, out, c, n]() mutable {
      const double* g = out.grad().data();
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* gc = g + ch * n;
        if (x.requires_grad()) {
          x.ensure_grad();
          const double a = alpha.val()[ch];
          double* xg = x.data_ptr()->grad.data() + ch * n;
          for (int64_t i = 0; i < n; ++i) xg[i] += gc[i] * a;
        }
        if (alpha.requires_grad()) {
          alpha.ensure_grad();
          const double* xc = x.val().data() + ch * n;
          double s = 0.0;
          for (int64_t i = 0; i < n; ++i) s += gc[i] * xc[i];
          alpha.data_ptr()->grad[ch] += s;
        }
        if (beta.requires_grad()) {
          beta.ensure_grad();
          double s = 0.0;
          for (int64_t i = 0; i < n; ++i) s += gc[i];
          beta.data_ptr()->grad[ch] += s;
        }
      }
    });
  }
  return out;
}

// ---- resampling -------------------------------------------------------------

// Align-corners bilinear upsampling to exactly double resolution.
inline Tensor upsample2x_bilinear(const Tensor& x) {
  ACCAR_CHECK(x.rank() == 3, "upsample2x_bilinear: [C,H,W] expected");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int64_t oh = 2 * h, ow = 2 * w;
  const double sy = oh > 1 ? double(h - 1) / double(oh - 1) : 0.0;
  const double sx = ow > 1 ? double(w - 1) / double(ow - 1) : 0.0;
  Tensor out = Tensor::zeros({c, oh, ow});
  // Precompute 1D sample positions once; reused by forward and backward.
  std::vector<int64_t> y0(oh), x0(ow);
  std::vector<double> fy(oh), fx(ow);
  for (int64_t oy = 0; oy < oh; ++oy) {
    const double p = sy * double(oy);
    y0[oy] = std::min(int64_t(p), h - 2 >= 0 ? h - 2 : 0);
    fy[oy] = p - double(y0[oy]);
  }
  for (int64_t ox = 0; ox < ow; ++ox) {
    const double p = sx * double(ox);
    x0[ox] = std::min(int64_t(p), w - 2 >= 0 ? w - 2 : 0);
    fx[ox] = p - double(x0[ox]);
  }
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* xc = x.val().data() + ch * h * w;
    double* oc = out.mutable_val().data() + ch * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const int64_t ya = y0[oy], yb = std::min(ya + 1, h - 1);
      const double ty = fy[oy];
      const double* r0 = xc + ya * w;
      const double* r1 = xc + yb * w;
      double* orow = oc + oy * ow;
      for (int64_t ox = 0; ox < ow; ++ox) {
        const int64_t xa = x0[ox], xb = std::min(xa + 1, w - 1);
        const double tx = fx[ox];
        orow[ox] = (1 - ty) * ((1 - tx) * r0[xa] + tx * r0[xb]) + ty * ((1 - tx) * r1[xa] + tx * r1[xb]);
      }
    }
  }
  if (detail::tracking({&x})) {
    detail::mark_and_record(out, [x, out, c, h, w, oh, ow, y0, x0, fy, fx]() mutable {
      x.ensure_grad();
      const double* g = out.grad().data();
      for (int64_t ch = 0; ch < c; ++ch) {
        double* xg = x.data_ptr()->grad.data() + ch * h * w;
        const double* gc = g + ch * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t ya = y0[oy], yb = std::min(ya + 1, h - 1);
          const double ty = fy[oy];
          const double* grow = gc + oy * ow;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t xa = x0[ox], xb = std::min(xa + 1, w - 1);
            const double tx = fx[ox];
            const double gv = grow[ox];
            xg[ya * w + xa] += (1 - ty) * (1 - tx) * gv;
            xg[ya * w + xb] += (1 - ty) * tx * gv;
            xg[yb * w + xa] += ty * (1 - tx) * gv;
            xg[yb * w + xb] += ty * tx * gv;
          }
        }
      }
    });
  }
  return out;
}

// Sliding-window sum over every fully-contained win x win patch.
inline Tensor box_sum(const Tensor& x, int64_t win) {
  ACCAR_CHECK(x.rank() == 3, "box_sum: [C,H,W] expected");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  ACCAR_CHECK(win >= 1 && win <= h && win <= w, "box_sum: window does not fit");
  const int64_t oh = h - win + 1, ow = w - win + 1;
  Tensor out = Tensor::zeros({c, oh, ow});
  // Separable: row sums then column sums.
  std::vector<double> rowsum(size_t(h * ow));
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* xc = x.val().data() + ch * h * w;
    for (int64_t y = 0; y < h; ++y) {
      const double* r = xc + y * w;
      double s = 0.0;
      for (int64_t i = 0; i < win; ++i) s += r[i];
      rowsum[size_t(y * ow)] = s;
      for (int64_t ox = 1; ox < ow; ++ox) {
        s += r[ox + win - 1] - r[ox - 1];
        rowsum[size_t(y * ow + ox)] = s;
      }
    }
    double* oc = out.mutable_val().data() + ch * oh * ow;
    for (int64_t ox = 0; ox < ow; ++ox) {
      double s = 0.0;
      for (int64_t i = 0; i < win; ++i) s += rowsum[size_t(i * ow + ox)];
      oc[ox] = s;
      for (int64_t oy = 1; oy < oh; ++oy) {
        s += rowsum[size_t((oy + win - 1) * ow + ox)] - rowsum[size_t((oy - 1) * ow + ox)];
        oc[oy * ow + ox] = s;
      }
    }
  }
  if (detail::tracking({&x})) {
    detail::mark_and_record(out, [x, out, c, h, w, win, oh, ow]() mutable {
      x.ensure_grad();
      const double* g = out.grad().data();
      for (int64_t ch = 0; ch < c; ++ch) {
        double* xg = x.data_ptr()->grad.data() + ch * h * w;
        const double* gc = g + ch * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            const double gv = gc[oy * ow + ox];
            if (gv == 0.0) continue;
            for (int64_t ky = 0; ky < win; ++ky) {
              double* xrow = xg + (oy + ky) * w + ox;
              for (int64_t kx = 0; kx < win; ++kx) xrow[kx] += gv;
            }
          }
      }
    });
  }
  return out;
}

// ---- operators --------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }

// ---- verification -----------------------------------------------------------

// Max over coordinates of |analytic - central difference| / max(|a|, |n|, 1e-12).
// `f` must rebuild its graph from scratch on every call.
inline double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                             double eps = 1e-5) {
  Tensor x = point.clone(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f(x);
    tape.backward(loss);
    x.ensure_grad();
    analytic = x.grad();
  }
  double worst = 0.0;
  {
    NoGrad ng;
    Tensor probe = point.clone(false);
    for (int64_t i = 0; i < probe.numel(); ++i) {
      const double orig = probe.val()[i];
      probe.mutable_val()[i] = orig + eps;
      const double fp = f(probe).item();
      probe.mutable_val()[i] = orig - eps;
      const double fm = f(probe).item();
      probe.mutable_val()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-12});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace accar
