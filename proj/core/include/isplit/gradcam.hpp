#pragma once

#include <string>
#include <vector>

#include "isplit/model.hpp"

namespace isplit {

struct UnsupportedLayerError : std::runtime_error {
  explicit UnsupportedLayerError(const std::string& what) : std::runtime_error(what) {}
};

/// Per-channel importance coefficients of one layer for one (image, class):
/// the spatial mean of the class logit's gradient w.r.t. the layer output.
template <typename S>
struct AlphaVectorT {
  int layer = -1;
  int class_id = -1;
  std::vector<S> values;  // one per channel
};

/// Spatial class activation map of one layer: ReLU of the alpha-weighted
/// channel sum. Entries are >= 0 by construction.
template <typename S>
struct ImportanceMapT {
  int layer = -1;
  int class_id = -1;
  int image_id = -1;
  TensorT<S> map;  // rank 2 (n, m)
};

using AlphaVector = AlphaVectorT<float>;
using ImportanceMap = ImportanceMapT<float>;

enum class SaliencyMethod { gradcam, gradients };
enum class CuiReduction { sum, mean };
enum class CuiScope { per_image, per_class, general };

std::string to_string(CuiReduction r);
std::string to_string(CuiScope s);
CuiReduction cui_reduction_from_string(const std::string& s);

/// Layers the CUI pipeline evaluates: conv and maxpool (dense layers carry
/// no spatial map).
template <typename S>
std::vector<int> cui_layers(const ModelT<S>& model) {
  std::vector<int> out;
  for (const auto& l : model.layers)
    if (l.has_spatial_map()) out.push_back(l.index);
  return out;
}

namespace detail {

template <typename S>
void check_cui_layer(const ModelT<S>& model, int layer) {
  if (layer < 0 || layer > model.last_index())
    throw UnsupportedLayerError("layer index " + std::to_string(layer) + " out of range");
  if (!model.layers[layer].has_spatial_map())
    throw UnsupportedLayerError("layer '" + model.layers[layer].name + "' (" +
                                layer_kind_name(model.layers[layer].kind) +
                                ") carries no spatial map");
}

// Pre-softmax logit id: the activation feeding a trailing softmax layer, or
// the final activation when there is none.
template <typename S>
TensorId logit_id(const ModelT<S>& model, const ForwardTrace<S>& trace) {
  if (!model.layers.empty() && model.layers.back().kind == LayerKind::softmax) {
    if (model.layers.size() < 2) throw ShapeError("softmax-only model has no logits");
    return trace.activations[model.layers.size() - 2];
  }
  return trace.logits;
}

}  // namespace detail

/// One forward + one backward per image; maps for every requested layer.
template <typename S>
std::vector<ImportanceMapT<S>> importance_maps(const ModelT<S>& model, const TensorT<S>& image,
                                               int class_id, const std::vector<int>& layers,
                                               SaliencyMethod method = SaliencyMethod::gradcam,
                                               int image_id = -1) {
  if (class_id < 0 || class_id >= model.class_count)
    throw ShapeError("class " + std::to_string(class_id) + " out of range [0," +
                     std::to_string(model.class_count) + ")");
  for (int layer : layers) detail::check_cui_layer(model, layer);

  ForwardTrace<S> trace = forward_retaining(model, image);
  const TensorId logits = detail::logit_id(model, trace);
  TensorT<S> seed = TensorT<S>::zeros(trace.tape.value(logits).shape);
  seed.data[class_id] = S(1);
  const GradientSet<S> grads = trace.tape.backward(logits, &seed);

  std::vector<ImportanceMapT<S>> out;
  out.reserve(layers.size());
  for (int layer : layers) {
    const TensorT<S>& feat = trace.tape.value(trace.activations[layer]);
    const TensorT<S>& g = grads.at(trace.activations[layer]);
    const int z = feat.shape[0], n = feat.shape[1], m = feat.shape[2];
    const S inv_nm = S(1) / static_cast<S>(n * m);

    ImportanceMapT<S> im;
    im.layer = layer;
    im.class_id = class_id;
    im.image_id = image_id;
    im.map = TensorT<S>::zeros({n, m});
    if (method == SaliencyMethod::gradcam) {
      for (int k = 0; k < z; ++k) {
        const S* gplane = g.data.data() + static_cast<std::size_t>(k) * n * m;
        S acc = 0;
        for (int i = 0; i < n * m; ++i) acc += gplane[i];
        const S alpha = acc * inv_nm;
        const S* fplane = feat.data.data() + static_cast<std::size_t>(k) * n * m;
        for (int i = 0; i < n * m; ++i) im.map.data[i] += alpha * fplane[i];
      }
    } else {
      S alpha_sum = 0;
      for (int k = 0; k < z; ++k) {
        const S* gplane = g.data.data() + static_cast<std::size_t>(k) * n * m;
        S acc = 0;
        for (int i = 0; i < n * m; ++i) acc += gplane[i];
        alpha_sum += acc * inv_nm;
      }
      for (int i = 0; i < n * m; ++i) im.map.data[i] = alpha_sum;
    }
    for (auto& v : im.map.data) v = v > S(0) ? v : S(0);
    out.push_back(std::move(im));
  }
  return out;
}

template <typename S>
AlphaVectorT<S> gradcam_alpha(const ModelT<S>& model, const TensorT<S>& image, int class_id,
                              int layer) {
  if (class_id < 0 || class_id >= model.class_count)
    throw ShapeError("class " + std::to_string(class_id) + " out of range [0," +
                     std::to_string(model.class_count) + ")");
  detail::check_cui_layer(model, layer);
  ForwardTrace<S> trace = forward_retaining(model, image);
  const TensorId logits = detail::logit_id(model, trace);
  TensorT<S> seed = TensorT<S>::zeros(trace.tape.value(logits).shape);
  seed.data[class_id] = S(1);
  const GradientSet<S> grads = trace.tape.backward(logits, &seed);
  const TensorT<S>& g = grads.at(trace.activations[layer]);
  const int z = g.shape[0], n = g.shape[1], m = g.shape[2];
  AlphaVectorT<S> alpha;
  alpha.layer = layer;
  alpha.class_id = class_id;
  alpha.values.resize(z);
  const S inv_nm = S(1) / static_cast<S>(n * m);
  for (int k = 0; k < z; ++k) {
    const S* gplane = g.data.data() + static_cast<std::size_t>(k) * n * m;
    S acc = 0;
    for (int i = 0; i < n * m; ++i) acc += gplane[i];
    alpha.values[k] = acc * inv_nm;
  }
  return alpha;
}

template <typename S>
ImportanceMapT<S> gradcam_map(const ModelT<S>& model, const TensorT<S>& image, int class_id,
                              int layer) {
  return importance_maps(model, image, class_id, {layer}, SaliencyMethod::gradcam)[0];
}

/// Scalar reduction of one importance map (SUM by default).
template <typename S>
double per_image_cui(const ImportanceMapT<S>& im, CuiReduction reduction = CuiReduction::sum) {
  double acc = 0;
  for (S v : im.map.data) acc += static_cast<double>(v);
  if (reduction == CuiReduction::mean) acc /= static_cast<double>(im.map.numel());
  return acc;
}

struct CuiCurve {
  std::vector<int> layer_indices;
  std::vector<std::string> layer_names;
  std::vector<double> values;
  CuiScope scope = CuiScope::general;
  int scope_class = -1;  // set for per_class
  CuiReduction reduction = CuiReduction::sum;
  std::string dataset_id;
  std::vector<int> class_subset;  // empty = all classes
  int image_count = 0;

  double value_at(int layer_index) const;
  int argmax_layer() const;
};

struct CuiOptions {
  CuiReduction reduction = CuiReduction::sum;
  std::vector<int> class_subset;  // empty = all classes
  bool class_balanced = false;
  int threads = 0;  // <=0: ISPLIT_THREADS env or hardware concurrency
  SaliencyMethod method = SaliencyMethod::gradcam;
};

/// Per-image CUI rows (image x evaluated layer) w.r.t. each image's
/// ground-truth class. Parallel over images; row order is image order, so
/// results are independent of the thread count.
std::vector<std::vector<double>> per_image_cui_rows(const Model& model,
                                                    const std::vector<TensorF>& images,
                                                    const std::vector<int>& labels,
                                                    const std::vector<int>& image_ids,
                                                    CuiReduction reduction, SaliencyMethod method,
                                                    int threads);

/// CUI curve over the indexed images (all images when `view` is empty),
/// restricted to opts.class_subset when given.
CuiCurve cui_curve(const Model& model, const std::vector<TensorF>& images,
                   const std::vector<int>& labels, const std::vector<int>& view,
                   const CuiOptions& opts = {});

/// Same pipeline with the feature-map factor removed: maps are the ReLU of
/// the summed per-channel gradient means alone.
CuiCurve gradients_baseline_curve(const Model& model, const std::vector<TensorF>& images,
                                  const std::vector<int>& labels, const std::vector<int>& view,
                                  const CuiOptions& opts = {});

/// All local maxima of the curve (a plateau counts once, at its deepest
/// element), ranked by descending value; ties rank the deeper layer first.
/// The first element is the global maximum.
std::vector<int> select_split_points(const CuiCurve& curve);

/// Positions i with sizes[i+1] < sizes[i] ("split after element i").
std::vector<int> cde_candidates(const std::vector<long long>& sizes);

/// CDE applied over the same conv/pool domain the CUI curve evaluates,
/// mapped back to model layer indices.
std::vector<int> cde_candidate_layers(const Model& model);

/// Mean absolute difference between the importance map at `layer` under the
/// model and under a copy whose layers deeper than `layer` were
/// re-randomized with `seed`. class_id < 0 uses the model's own prediction.
double sanity_check(const Model& model, const TensorF& image, int layer, std::uint64_t seed,
                    int class_id = -1);

int resolve_thread_count(int requested);

}  // namespace isplit
