#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "isplit/errors.hpp"

namespace isplit {

/// Dense row-major N-d array. Rank 0 (empty shape) is a scalar holding one
/// value. Scalar type is f32 for training/inference and f64 for verification.
template <typename S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;

  explicit TensorT(std::vector<int> shp) : shape(std::move(shp)) {
    data.assign(static_cast<std::size_t>(shape_numel(shape)), S(0));
  }

  TensorT(std::vector<int> shp, std::vector<S> d) : shape(std::move(shp)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<long long>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
  }

  static long long shape_numel(const std::vector<int>& shp) {
    long long n = 1;
    for (int e : shp) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_string(shp));
      n *= e;
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shp) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shp.size(); ++i) os << (i ? "," : "") << shp[i];
    os << ')';
    return os.str();
  }

  static TensorT zeros(std::vector<int> shp) { return TensorT(std::move(shp)); }

  static TensorT full(std::vector<int> shp, S v) {
    TensorT t(std::move(shp));
    for (auto& x : t.data) x = v;
    return t;
  }

  static TensorT scalar(S v) { return TensorT({}, {v}); }

  long long numel() const { return static_cast<long long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return data.size() == 1 && shape.empty(); }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename S, typename T>
TensorT<T> tensor_cast(const TensorT<S>& t) {
  TensorT<T> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<T>(t.data[i]);
  return out;
}

inline TensorD to_f64(const TensorF& t) { return tensor_cast<float, double>(t); }
inline TensorF to_f32(const TensorD& t) { return tensor_cast<double, float>(t); }

}  // namespace isplit
