#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "isplit/model.hpp"
#include "isplit/rng.hpp"
#include "isplit/tensor.hpp"

namespace isplit::test {

inline TensorD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline TensorF random_tensor_f(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorF t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Relative error with an absolute regime for near-zero pairs: full relative
// precision where the gradient is meaningful, 1e-10 absolute where both
// sides vanish (finite-difference noise floor).
inline double grad_rel_err(double analytic, double numeric) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < 1e-6) return std::abs(analytic - numeric) < 1e-10 ? 0.0 : 1.0;
  return std::abs(analytic - numeric) / mag;
}

/// Central finite differences of a scalar function of several leaf tensors.
/// `f` must rebuild its computation from the leaf values on every call.
/// Checks `samples` randomly chosen coordinates per leaf (all when <= 0)
/// against the provided analytic gradients; returns the worst relative error.
inline double fd_check(const std::function<double(const std::vector<TensorD>&)>& f,
                       std::vector<TensorD> leaves, const std::vector<TensorD>& analytic,
                       Rng& picker, int samples_per_leaf = -1, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const std::size_t n = leaves[li].data.size();
    std::vector<std::size_t> coords;
    if (samples_per_leaf <= 0 || static_cast<std::size_t>(samples_per_leaf) >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int s = 0; s < samples_per_leaf; ++s) coords.push_back(picker.below(n));
    }
    for (std::size_t ci : coords) {
      const double saved = leaves[li].data[ci];
      leaves[li].data[ci] = saved + step;
      const double up = f(leaves);
      leaves[li].data[ci] = saved - step;
      const double down = f(leaves);
      leaves[li].data[ci] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, grad_rel_err(analytic[li].data[ci], numeric));
    }
  }
  return worst;
}

/// Brute-force max pooling: exhaustive window scan, independent of the tape.
inline TensorD maxpool_oracle(const TensorD& in, int k, int stride) {
  const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int hout = (h - k) / stride + 1, wout = (w - k) / stride + 1;
  TensorD out({c, hout, wout});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < hout; ++oy)
      for (int ox = 0; ox < wout; ++ox) {
        double best = -1e300;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            best = std::max(best, in.data[(ci * h + oy * stride + dy) * w + ox * stride + dx]);
        out.data[(ci * hout + oy) * wout + ox] = best;
      }
  return out;
}

/// Direct six-loop cross-correlation, independent of the tape.
inline TensorD conv_oracle(const TensorD& in, const TensorD& k, const TensorD& b, int stride,
                           int pad) {
  const int cin = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int hout = (h + 2 * pad - kh) / stride + 1, wout = (w + 2 * pad - kw) / stride + 1;
  TensorD out({cout, hout, wout});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < hout; ++oy)
      for (int ox = 0; ox < wout; ++ox) {
        double acc = b.data[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += k.data[((co * cin + ci) * kh + ky) * kw + kx] *
                     in.data[(ci * h + iy) * w + ix];
            }
        out.data[(co * hout + oy) * wout + ox] = acc;
      }
  return out;
}

template <typename S>
inline bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(S)) == 0;
}

template <typename S>
inline bool params_bitwise_equal(const ModelT<S>& a, const ModelT<S>& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].size() != b.params[i].size()) return false;
    for (std::size_t j = 0; j < a.params[i].size(); ++j)
      if (!bitwise_equal(a.params[i][j], b.params[i][j])) return false;
  }
  return true;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("isplit_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace isplit::test
