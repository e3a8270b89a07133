#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "isplit/tensor.hpp"

namespace isplit {

using TensorId = std::int32_t;

template <typename S>
struct GradientSet {
  std::vector<TensorT<S>> grads;
  std::vector<char> present;

  bool contains(TensorId id) const {
    return id >= 0 && id < static_cast<TensorId>(present.size()) && present[id];
  }

  const TensorT<S>& at(TensorId id) const {
    if (!contains(id))
      throw ShapeError("gradient requested for detached tensor id " + std::to_string(id));
    return grads[id];
  }

  TensorT<S>& accum(TensorId id, const std::vector<int>& shape) {
    if (!present[id]) {
      grads[id] = TensorT<S>::zeros(shape);
      present[id] = 1;
    }
    return grads[id];
  }
};

/// Reverse-mode tape. Ops append value nodes; inputs always precede outputs,
/// so reverse id order is a reverse topological order. A tape is confined to
/// one thread; distinct tapes over shared read-only data may run in parallel.
template <typename S>
class Tape {
 public:
  TensorId leaf(TensorT<S> value) { return push(std::move(value), {}, nullptr); }

  const TensorT<S>& value(TensorId id) const { return values_[check_id(id)]; }
  std::size_t size() const { return values_.size(); }

  TensorId conv2d(TensorId input, TensorId kernel, TensorId bias, int stride, int padding);
  TensorId tconv2d(TensorId input, TensorId kernel, TensorId bias, int stride, int padding,
                   int out_pad_h, int out_pad_w);
  TensorId maxpool2d(TensorId input, int k, int stride);
  TensorId relu(TensorId input);
  TensorId flatten(TensorId input);
  TensorId dense(TensorId input, TensorId weight, TensorId bias);
  TensorId softmax(TensorId input);
  TensorId softmax_cross_entropy(TensorId logits, int label);
  TensorId mse(TensorId prediction, TensorId target);
  TensorId sum(TensorId input);
  TensorId add(TensorId a, TensorId b);
  TensorId scale(TensorId a, S factor);

  /// Gradients of `output` w.r.t. every ancestor node. `output` must be a
  /// single-element tensor unless `seed` supplies an explicit output gradient.
  GradientSet<S> backward(TensorId output, const TensorT<S>* seed = nullptr) const {
    check_id(output);
    if (seed == nullptr && values_[output].numel() != 1)
      throw ShapeError("backward output must be scalar, got shape " +
                       TensorT<S>::shape_string(values_[output].shape));
    if (seed != nullptr && !seed->same_shape(values_[output]))
      throw ShapeError("backward seed shape mismatch");
    GradientSet<S> gs;
    gs.grads.resize(values_.size());
    gs.present.assign(values_.size(), 0);
    gs.grads[output] = seed ? *seed : TensorT<S>::full(values_[output].shape, S(1));
    gs.present[output] = 1;
    for (TensorId id = output; id >= 0; --id) {
      if (gs.present[id] && nodes_[id].grad_fn) nodes_[id].grad_fn(*this, gs);
    }
    return gs;
  }

 private:
  using GradFn = std::function<void(const Tape&, GradientSet<S>&)>;

  struct Node {
    GradFn grad_fn;  // null for leaves
  };

  TensorId check_id(TensorId id) const {
    if (id < 0 || id >= static_cast<TensorId>(values_.size()))
      throw ShapeError("invalid tensor id " + std::to_string(id));
    return id;
  }

  TensorId push(TensorT<S> value, std::initializer_list<TensorId>, GradFn fn) {
#ifndef NDEBUG
    assert(value.all_finite() && "non-finite value produced by forward op");
#endif
    values_.push_back(std::move(value));
    nodes_.push_back(Node{std::move(fn)});
    return static_cast<TensorId>(values_.size() - 1);
  }

  std::vector<TensorT<S>> values_;
  std::vector<Node> nodes_;
};

namespace detail {

// Valid output range for the strided window relation i = o*stride + k - pad,
// constrained to i in [0, extent).
inline void strided_range(int k, int pad, int stride, int extent, int out_extent, int& lo, int& hi) {
  const int off = k - pad;  // i = o*stride + off
  lo = off < 0 ? (-off + stride - 1) / stride : 0;
  hi = (extent - 1 - off) / stride;
  if (hi > out_extent - 1) hi = out_extent - 1;
}

}  // namespace detail

template <typename S>
TensorId Tape<S>::conv2d(TensorId input, TensorId kernel, TensorId bias, int stride, int padding) {
  const TensorT<S>& in = value(input);
  const TensorT<S>& k = value(kernel);
  const TensorT<S>& b = value(bias);
  if (in.rank() != 3 || k.rank() != 4 || b.rank() != 1)
    throw ShapeError("conv2d expects input rank 3, kernel rank 4, bias rank 1; got " +
                     TensorT<S>::shape_string(in.shape) + ", " + TensorT<S>::shape_string(k.shape) +
                     ", " + TensorT<S>::shape_string(b.shape));
  const int cin = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  if (stride < 1 || padding < 0)
    throw ShapeError("conv2d requires stride >= 1 and padding >= 0");
  if (k.shape[1] != cin)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) +
                     " channels, kernel expects " + std::to_string(k.shape[1]));
  if (b.shape[0] != cout)
    throw ShapeError("conv2d bias length " + std::to_string(b.shape[0]) +
                     " does not match out channels " + std::to_string(cout));
  const int hout = (h + 2 * padding - kh) / stride + 1;
  const int wout = (w + 2 * padding - kw) / stride + 1;
  if (h + 2 * padding < kh || w + 2 * padding < kw || hout < 1 || wout < 1)
    throw ShapeError("conv2d kernel " + TensorT<S>::shape_string(k.shape) +
                     " exceeds padded input " + TensorT<S>::shape_string(in.shape));

  TensorT<S> out({cout, hout, wout});
  const S* ind = in.data.data();
  const S* kd = k.data.data();
  S* od = out.data.data();
  for (int co = 0; co < cout; ++co) {
    S* oplane = od + static_cast<std::size_t>(co) * hout * wout;
    const S bv = b.data[co];
    for (int i = 0; i < hout * wout; ++i) oplane[i] = bv;
    for (int ci = 0; ci < cin; ++ci) {
      const S* iplane = ind + static_cast<std::size_t>(ci) * h * w;
      const S* kplane = kd + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        int oy_lo, oy_hi;
        detail::strided_range(ky, padding, stride, h, hout, oy_lo, oy_hi);
        for (int kx = 0; kx < kw; ++kx) {
          const S wv = kplane[ky * kw + kx];
          if (wv == S(0)) continue;
          int ox_lo, ox_hi;
          detail::strided_range(kx, padding, stride, w, wout, ox_lo, ox_hi);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const int iy = oy * stride + ky - padding;
            const S* irow = iplane + static_cast<std::size_t>(iy) * w;
            S* orow = oplane + static_cast<std::size_t>(oy) * wout;
            int ix = ox_lo * stride + kx - padding;
            for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) orow[ox] += wv * irow[ix];
          }
        }
      }
    }
  }

  const TensorId out_id = push(std::move(out), {input, kernel, bias}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input, kernel, bias, stride, padding, cin, h, w, cout, kh, kw,
                            hout, wout](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    const TensorT<S>& in = t.value(input);
    const TensorT<S>& k = t.value(kernel);
    TensorT<S>& gin = gs.accum(input, in.shape);
    TensorT<S>& gk = gs.accum(kernel, k.shape);
    TensorT<S>& gb = gs.accum(bias, t.value(bias).shape);
    const S* god = go.data.data();
    for (int co = 0; co < cout; ++co) {
      const S* goplane = god + static_cast<std::size_t>(co) * hout * wout;
      S acc = 0;
      for (int i = 0; i < hout * wout; ++i) acc += goplane[i];
      gb.data[co] += acc;
      for (int ci = 0; ci < cin; ++ci) {
        const S* iplane = in.data.data() + static_cast<std::size_t>(ci) * h * w;
        S* giplane = gin.data.data() + static_cast<std::size_t>(ci) * h * w;
        const S* kplane = k.data.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        S* gkplane = gk.data.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          int oy_lo, oy_hi;
          detail::strided_range(ky, padding, stride, h, hout, oy_lo, oy_hi);
          for (int kx = 0; kx < kw; ++kx) {
            int ox_lo, ox_hi;
            detail::strided_range(kx, padding, stride, w, wout, ox_lo, ox_hi);
            const S wv = kplane[ky * kw + kx];
            S wacc = 0;
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const int iy = oy * stride + ky - padding;
              const S* irow = iplane + static_cast<std::size_t>(iy) * w;
              S* girow = giplane + static_cast<std::size_t>(iy) * w;
              const S* gorow = goplane + static_cast<std::size_t>(oy) * wout;
              int ix = ox_lo * stride + kx - padding;
              for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += stride) {
                const S g = gorow[ox];
                wacc += g * irow[ix];
                girow[ix] += g * wv;
              }
            }
            gkplane[ky * kw + kx] += wacc;
          }
        }
      }
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::tconv2d(TensorId input, TensorId kernel, TensorId bias, int stride, int padding,
                          int out_pad_h, int out_pad_w) {
  const TensorT<S>& in = value(input);
  const TensorT<S>& k = value(kernel);
  const TensorT<S>& b = value(bias);
  if (in.rank() != 3 || k.rank() != 4 || b.rank() != 1)
    throw ShapeError("tconv2d expects input rank 3, kernel rank 4, bias rank 1");
  const int cin = in.shape[0], h = in.shape[1], w = in.shape[2];
  if (k.shape[0] != cin)
    throw ShapeError("tconv2d channel mismatch: input has " + std::to_string(cin) +
                     " channels, kernel expects " + std::to_string(k.shape[0]));
  const int cout = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  if (b.shape[0] != cout) throw ShapeError("tconv2d bias length mismatch");
  if (stride < 1 || padding < 0 || out_pad_h < 0 || out_pad_w < 0 || out_pad_h >= stride ||
      out_pad_w >= stride)
    throw ShapeError("tconv2d invalid stride/padding/output padding");
  const int hout = (h - 1) * stride - 2 * padding + kh + out_pad_h;
  const int wout = (w - 1) * stride - 2 * padding + kw + out_pad_w;
  if (hout < 1 || wout < 1) throw ShapeError("tconv2d produces empty output");

  TensorT<S> out({cout, hout, wout});
  for (int co = 0; co < cout; ++co) {
    S* oplane = out.data.data() + static_cast<std::size_t>(co) * hout * wout;
    const S bv = b.data[co];
    for (int i = 0; i < hout * wout; ++i) oplane[i] = bv;
  }
  // out[co, y*s - p + ky, x*s - p + kx] += in[ci, y, x] * K[ci, co, ky, kx]
  for (int ci = 0; ci < cin; ++ci) {
    const S* iplane = in.data.data() + static_cast<std::size_t>(ci) * h * w;
    for (int co = 0; co < cout; ++co) {
      S* oplane = out.data.data() + static_cast<std::size_t>(co) * hout * wout;
      const S* kplane = k.data.data() + (static_cast<std::size_t>(ci) * cout + co) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        int y_lo, y_hi;
        detail::strided_range(ky, padding, stride, hout, h, y_lo, y_hi);
        for (int kx = 0; kx < kw; ++kx) {
          const S wv = kplane[ky * kw + kx];
          if (wv == S(0)) continue;
          int x_lo, x_hi;
          detail::strided_range(kx, padding, stride, wout, w, x_lo, x_hi);
          for (int y = y_lo; y <= y_hi; ++y) {
            const int oy = y * stride + ky - padding;
            const S* irow = iplane + static_cast<std::size_t>(y) * w;
            S* orow = oplane + static_cast<std::size_t>(oy) * wout;
            int ox = x_lo * stride + kx - padding;
            for (int x = x_lo; x <= x_hi; ++x, ox += stride) orow[ox] += wv * irow[x];
          }
        }
      }
    }
  }

  const TensorId out_id = push(std::move(out), {input, kernel, bias}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input, kernel, bias, stride, padding, cin, h, w, cout, kh, kw,
                            hout, wout](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    const TensorT<S>& in = t.value(input);
    const TensorT<S>& k = t.value(kernel);
    TensorT<S>& gin = gs.accum(input, in.shape);
    TensorT<S>& gk = gs.accum(kernel, k.shape);
    TensorT<S>& gb = gs.accum(bias, t.value(bias).shape);
    for (int co = 0; co < cout; ++co) {
      const S* goplane = go.data.data() + static_cast<std::size_t>(co) * hout * wout;
      S acc = 0;
      for (int i = 0; i < hout * wout; ++i) acc += goplane[i];
      gb.data[co] += acc;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const S* iplane = in.data.data() + static_cast<std::size_t>(ci) * h * w;
      S* giplane = gin.data.data() + static_cast<std::size_t>(ci) * h * w;
      for (int co = 0; co < cout; ++co) {
        const S* goplane = go.data.data() + static_cast<std::size_t>(co) * hout * wout;
        const S* kplane = k.data.data() + (static_cast<std::size_t>(ci) * cout + co) * kh * kw;
        S* gkplane = gk.data.data() + (static_cast<std::size_t>(ci) * cout + co) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          int y_lo, y_hi;
          detail::strided_range(ky, padding, stride, hout, h, y_lo, y_hi);
          for (int kx = 0; kx < kw; ++kx) {
            int x_lo, x_hi;
            detail::strided_range(kx, padding, stride, wout, w, x_lo, x_hi);
            const S wv = kplane[ky * kw + kx];
            S wacc = 0;
            for (int y = y_lo; y <= y_hi; ++y) {
              const int oy = y * stride + ky - padding;
              const S* irow = iplane + static_cast<std::size_t>(y) * w;
              S* girow = giplane + static_cast<std::size_t>(y) * w;
              const S* gorow = goplane + static_cast<std::size_t>(oy) * wout;
              int ox = x_lo * stride + kx - padding;
              for (int x = x_lo; x <= x_hi; ++x, ox += stride) {
                const S g = gorow[ox];
                wacc += g * irow[x];
                girow[x] += g * wv;
              }
            }
            gkplane[ky * kw + kx] += wacc;
          }
        }
      }
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::maxpool2d(TensorId input, int k, int stride) {
  const TensorT<S>& in = value(input);
  if (in.rank() != 3) throw ShapeError("maxpool2d expects rank-3 input");
  const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
  if (k < 1 || stride < 1) throw ShapeError("maxpool2d requires k >= 1 and stride >= 1");
  if (h < k || w < k)
    throw ShapeError("maxpool2d window " + std::to_string(k) + " exceeds input " +
                     TensorT<S>::shape_string(in.shape));
  const int hout = (h - k) / stride + 1;
  const int wout = (w - k) / stride + 1;

  TensorT<S> out({c, hout, wout});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.data.size());
  for (int ci = 0; ci < c; ++ci) {
    const S* iplane = in.data.data() + static_cast<std::size_t>(ci) * h * w;
    for (int oy = 0; oy < hout; ++oy) {
      for (int ox = 0; ox < wout; ++ox) {
        const int y0 = oy * stride, x0 = ox * stride;
        S best = iplane[y0 * w + x0];
        int best_idx = y0 * w + x0;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const int idx = (y0 + dy) * w + (x0 + dx);
            if (iplane[idx] > best) {  // first occurrence wins ties
              best = iplane[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ci) * hout + oy) * wout + ox;
        out.data[o] = best;
        (*argmax)[o] = static_cast<std::int32_t>(ci * h * w + best_idx);
      }
    }
  }

  const TensorId out_id = push(std::move(out), {input}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input, argmax](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    TensorT<S>& gin = gs.accum(input, t.value(input).shape);
    for (std::size_t i = 0; i < go.data.size(); ++i) gin.data[(*argmax)[i]] += go.data[i];
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::relu(TensorId input) {
  const TensorT<S>& in = value(input);
  TensorT<S> out(in.shape);
  for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > S(0) ? in.data[i] : S(0);
  const TensorId out_id = push(std::move(out), {input}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    const TensorT<S>& in = t.value(input);
    TensorT<S>& gin = gs.accum(input, in.shape);
    for (std::size_t i = 0; i < go.data.size(); ++i)
      if (in.data[i] > S(0)) gin.data[i] += go.data[i];
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::flatten(TensorId input) {
  const TensorT<S>& in = value(input);
  TensorT<S> out({static_cast<int>(in.numel())}, in.data);
  const TensorId out_id = push(std::move(out), {input}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    TensorT<S>& gin = gs.accum(input, t.value(input).shape);
    for (std::size_t i = 0; i < go.data.size(); ++i) gin.data[i] += go.data[i];
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::dense(TensorId input, TensorId weight, TensorId bias) {
  const TensorT<S>& in = value(input);
  const TensorT<S>& wt = value(weight);
  const TensorT<S>& b = value(bias);
  if (in.rank() != 1 || wt.rank() != 2 || b.rank() != 1)
    throw ShapeError("dense expects input rank 1, weight rank 2, bias rank 1");
  const int n = in.shape[0], m = wt.shape[0];
  if (wt.shape[1] != n)
    throw ShapeError("dense weight " + TensorT<S>::shape_string(wt.shape) +
                     " incompatible with input length " + std::to_string(n));
  if (b.shape[0] != m) throw ShapeError("dense bias length mismatch");

  TensorT<S> out({m});
  for (int r = 0; r < m; ++r) {
    const S* wrow = wt.data.data() + static_cast<std::size_t>(r) * n;
    S acc = b.data[r];
    for (int cidx = 0; cidx < n; ++cidx) acc += wrow[cidx] * in.data[cidx];
    out.data[r] = acc;
  }
  const TensorId out_id = push(std::move(out), {input, weight, bias}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input, weight, bias, n, m](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    const TensorT<S>& in = t.value(input);
    const TensorT<S>& wt = t.value(weight);
    TensorT<S>& gin = gs.accum(input, in.shape);
    TensorT<S>& gw = gs.accum(weight, wt.shape);
    TensorT<S>& gb = gs.accum(bias, t.value(bias).shape);
    for (int r = 0; r < m; ++r) {
      const S g = go.data[r];
      gb.data[r] += g;
      const S* wrow = wt.data.data() + static_cast<std::size_t>(r) * n;
      S* gwrow = gw.data.data() + static_cast<std::size_t>(r) * n;
      for (int cidx = 0; cidx < n; ++cidx) {
        gin.data[cidx] += g * wrow[cidx];
        gwrow[cidx] += g * in.data[cidx];
      }
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::softmax(TensorId input) {
  const TensorT<S>& in = value(input);
  if (in.rank() != 1) throw ShapeError("softmax expects rank-1 input");
  TensorT<S> out(in.shape);
  S mx = in.data[0];
  for (S v : in.data) mx = std::max(mx, v);
  S denom = 0;
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    out.data[i] = std::exp(in.data[i] - mx);
    denom += out.data[i];
  }
  for (auto& v : out.data) v /= denom;
  const TensorId out_id = push(std::move(out), {input}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    const TensorT<S>& y = t.value(out_id);
    TensorT<S>& gin = gs.accum(input, t.value(input).shape);
    S dot = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) dot += go.data[i] * y.data[i];
    for (std::size_t i = 0; i < y.data.size(); ++i) gin.data[i] += y.data[i] * (go.data[i] - dot);
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::softmax_cross_entropy(TensorId logits, int label) {
  const TensorT<S>& z = value(logits);
  if (z.rank() != 1) throw ShapeError("softmax_cross_entropy expects rank-1 logits");
  const int kcls = z.shape[0];
  if (label < 0 || label >= kcls)
    throw ShapeError("label " + std::to_string(label) + " out of class range [0," +
                     std::to_string(kcls) + ")");
  S mx = z.data[0];
  for (S v : z.data) mx = std::max(mx, v);
  S denom = 0;
  for (S v : z.data) denom += std::exp(v - mx);
  const S loss = std::log(denom) + mx - z.data[label];
  const TensorId out_id = push(TensorT<S>::scalar(loss), {logits}, nullptr);
  nodes_[out_id].grad_fn = [out_id, logits, label, mx, denom](const Tape& t, GradientSet<S>& gs) {
    const S g = gs.grads[out_id].data[0];
    const TensorT<S>& z = t.value(logits);
    TensorT<S>& gin = gs.accum(logits, z.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
      const S p = std::exp(z.data[i] - mx) / denom;
      gin.data[i] += g * (p - (static_cast<int>(i) == label ? S(1) : S(0)));
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::mse(TensorId prediction, TensorId target) {
  const TensorT<S>& p = value(prediction);
  const TensorT<S>& q = value(target);
  if (!p.same_shape(q))
    throw ShapeError("mse shape mismatch: " + TensorT<S>::shape_string(p.shape) + " vs " +
                     TensorT<S>::shape_string(q.shape));
  const S inv_n = S(1) / static_cast<S>(p.numel());
  S acc = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const S d = p.data[i] - q.data[i];
    acc += d * d;
  }
  const TensorId out_id = push(TensorT<S>::scalar(acc * inv_n), {prediction, target}, nullptr);
  nodes_[out_id].grad_fn = [out_id, prediction, target, inv_n](const Tape& t, GradientSet<S>& gs) {
    const S g = gs.grads[out_id].data[0];
    const TensorT<S>& p = t.value(prediction);
    const TensorT<S>& q = t.value(target);
    TensorT<S>& gp = gs.accum(prediction, p.shape);
    TensorT<S>& gq = gs.accum(target, q.shape);
    const S c = S(2) * g * inv_n;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const S d = c * (p.data[i] - q.data[i]);
      gp.data[i] += d;
      gq.data[i] -= d;
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::sum(TensorId input) {
  const TensorT<S>& in = value(input);
  S acc = 0;
  for (S v : in.data) acc += v;
  const TensorId out_id = push(TensorT<S>::scalar(acc), {input}, nullptr);
  nodes_[out_id].grad_fn = [out_id, input](const Tape& t, GradientSet<S>& gs) {
    const S g = gs.grads[out_id].data[0];
    TensorT<S>& gin = gs.accum(input, t.value(input).shape);
    for (auto& v : gin.data) v += g;
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::add(TensorId a, TensorId b) {
  const TensorT<S>& ta = value(a);
  const TensorT<S>& tb = value(b);
  if (!ta.same_shape(tb)) throw ShapeError("add shape mismatch");
  TensorT<S> out(ta.shape);
  for (std::size_t i = 0; i < ta.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  const TensorId out_id = push(std::move(out), {a, b}, nullptr);
  nodes_[out_id].grad_fn = [out_id, a, b](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    TensorT<S>& ga = gs.accum(a, t.value(a).shape);
    TensorT<S>& gb = gs.accum(b, t.value(b).shape);
    for (std::size_t i = 0; i < go.data.size(); ++i) {
      ga.data[i] += go.data[i];
      gb.data[i] += go.data[i];
    }
  };
  return out_id;
}

template <typename S>
TensorId Tape<S>::scale(TensorId a, S factor) {
  const TensorT<S>& ta = value(a);
  TensorT<S> out(ta.shape);
  for (std::size_t i = 0; i < ta.data.size(); ++i) out.data[i] = factor * ta.data[i];
  const TensorId out_id = push(std::move(out), {a}, nullptr);
  nodes_[out_id].grad_fn = [out_id, a, factor](const Tape& t, GradientSet<S>& gs) {
    const TensorT<S>& go = gs.grads[out_id];
    TensorT<S>& ga = gs.accum(a, t.value(a).shape);
    for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += factor * go.data[i];
  };
  return out_id;
}

}  // namespace isplit
