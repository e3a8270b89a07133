#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isplit/rng.hpp"
#include "isplit/tape.hpp"
#include "isplit/tensor.hpp"

namespace isplit {

enum class LayerKind { conv, relu, maxpool, flatten, dense, softmax, tconv };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

struct LayerSpec {
  int index = 0;
  std::string name;
  LayerKind kind = LayerKind::relu;
  int out_channels = 0;  // conv/tconv
  int kernel = 0;        // conv/tconv/maxpool
  int stride = 1;        // conv/tconv/maxpool
  int padding = 0;       // conv/tconv
  int out_pad_h = 0;     // tconv
  int out_pad_w = 0;     // tconv
  int units = 0;         // dense
  std::vector<int> output_shape;

  bool has_params() const {
    return kind == LayerKind::conv || kind == LayerKind::tconv || kind == LayerKind::dense;
  }
  bool has_spatial_map() const { return kind == LayerKind::conv || kind == LayerKind::maxpool; }
};

struct ModelMeta {
  std::string dataset_id;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string architecture;
};

/// Sequential CNN. Immutable after training; shareable across threads for
/// read-only inference. class_count == 0 marks a non-classifier slice
/// (split head, or a tail fragment's upstream).
template <typename S>
struct ModelT {
  std::vector<int> input_shape;
  int class_count = 0;
  std::vector<LayerSpec> layers;
  std::vector<std::vector<TensorT<S>>> params;  // aligned with layers; [] or [kernel/weight, bias]
  ModelMeta meta;

  int last_index() const { return static_cast<int>(layers.size()) - 1; }
};

using Model = ModelT<float>;

template <typename From, typename To>
ModelT<To> model_cast(const ModelT<From>& m) {
  ModelT<To> out;
  out.input_shape = m.input_shape;
  out.class_count = m.class_count;
  out.layers = m.layers;
  out.meta = m.meta;
  out.params.resize(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i)
    for (const auto& p : m.params[i]) out.params[i].push_back(tensor_cast<From, To>(p));
  return out;
}

inline ModelT<double> model_to_f64(const Model& m) { return model_cast<float, double>(m); }

/// Shape a layer produces for a given input shape. Throws ShapeError naming
/// the layer when the chain breaks.
std::vector<int> infer_output_shape(const LayerSpec& layer, const std::vector<int>& in_shape);

/// Parameter tensor shapes a layer owns given its input shape.
std::vector<std::vector<int>> layer_param_shapes(const LayerSpec& layer,
                                                 const std::vector<int>& in_shape);

/// Builds a model from a preset name ("vgg-micro", "vgg-nano", "mlp-baseline")
/// or a textual layer list like "conv:8k3s1p1,relu,maxpool:2s2,flatten,dense:64".
/// Weights: fan-in-scaled uniform, bound = sqrt(1/fan_in), seeded.
Model build_model(const std::string& architecture, const std::vector<int>& input_shape,
                  int class_count, std::uint64_t seed);

/// Expands a preset name to its textual layer list (returns the input
/// unchanged if it is not a preset).
std::string expand_architecture(const std::string& architecture, int class_count);

template <typename S>
struct ForwardTrace {
  Tape<S> tape;
  TensorId input = -1;
  std::vector<TensorId> activations;            // one per layer
  std::vector<std::vector<TensorId>> param_ids;  // aligned with layers
  TensorId logits = -1;
};

template <typename S>
TensorId apply_layer(Tape<S>& tape, const LayerSpec& layer, TensorId in,
                     const std::vector<TensorId>& params) {
  switch (layer.kind) {
    case LayerKind::conv:
      return tape.conv2d(in, params[0], params[1], layer.stride, layer.padding);
    case LayerKind::tconv:
      return tape.tconv2d(in, params[0], params[1], layer.stride, layer.padding, layer.out_pad_h,
                          layer.out_pad_w);
    case LayerKind::relu:
      return tape.relu(in);
    case LayerKind::maxpool:
      return tape.maxpool2d(in, layer.kernel, layer.stride);
    case LayerKind::flatten:
      return tape.flatten(in);
    case LayerKind::dense:
      return tape.dense(in, params[0], params[1]);
    case LayerKind::softmax:
      return tape.softmax(in);
  }
  throw ShapeError("unknown layer kind");
}

/// Runs the model on one image, retaining every layer output on the tape.
template <typename S>
ForwardTrace<S> forward_retaining(const ModelT<S>& model, const TensorT<S>& image) {
  if (image.shape != model.input_shape)
    throw ShapeError("input shape " + TensorT<S>::shape_string(image.shape) +
                     " does not match model input " +
                     TensorT<S>::shape_string(model.input_shape));
  ForwardTrace<S> trace;
  trace.input = trace.tape.leaf(image);
  trace.param_ids.resize(model.layers.size());
  trace.activations.reserve(model.layers.size());
  TensorId cur = trace.input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (const auto& p : model.params[i]) trace.param_ids[i].push_back(trace.tape.leaf(p));
    cur = apply_layer(trace.tape, model.layers[i], cur, trace.param_ids[i]);
    trace.activations.push_back(cur);
  }
  trace.logits = cur;
  return trace;
}

/// Plain forward; same code path as forward_retaining, so outputs are
/// bitwise identical to the retained run.
template <typename S>
TensorT<S> forward(const ModelT<S>& model, const TensorT<S>& image) {
  ForwardTrace<S> trace = forward_retaining(model, image);
  return trace.tape.value(trace.logits);
}

template <typename S>
int predict_class(const ModelT<S>& model, const TensorT<S>& image) {
  const TensorT<S> logits = forward(model, image);
  int best = 0;
  for (std::size_t i = 1; i < logits.data.size(); ++i)
    if (logits.data[i] > logits.data[best]) best = static_cast<int>(i);
  return best;
}

/// Element count of each layer's output, in layer order.
template <typename S>
std::vector<long long> layer_sizes(const ModelT<S>& model) {
  std::vector<long long> sizes;
  sizes.reserve(model.layers.size());
  for (const auto& l : model.layers) sizes.push_back(TensorT<S>::shape_numel(l.output_shape));
  return sizes;
}

/// Head/tail partition at a target layer ("split after layer T").
template <typename S>
struct SplitPlanT {
  int target_layer = -1;
  ModelT<S> head;
  ModelT<S> tail;
};

using SplitPlan = SplitPlanT<float>;

template <typename S>
ModelT<S> slice_model(const ModelT<S>& model, int first, int last, const std::vector<int>& in_shape,
                      int class_count) {
  ModelT<S> out;
  out.input_shape = in_shape;
  out.class_count = class_count;
  out.meta = model.meta;
  for (int i = first; i <= last; ++i) {
    LayerSpec l = model.layers[i];
    l.index = static_cast<int>(out.layers.size());
    out.layers.push_back(std::move(l));
    out.params.push_back(model.params[i]);
  }
  return out;
}

template <typename S>
SplitPlanT<S> split(const ModelT<S>& model, int target_layer) {
  if (target_layer < 0 || target_layer >= model.last_index())
    throw ShapeError("split index " + std::to_string(target_layer) + " out of range [0," +
                     std::to_string(model.last_index()) + ")");
  SplitPlanT<S> plan;
  plan.target_layer = target_layer;
  plan.head = slice_model(model, 0, target_layer, model.input_shape, 0);
  plan.tail = slice_model(model, target_layer + 1, model.last_index(),
                          model.layers[target_layer].output_shape, model.class_count);
  return plan;
}

/// Composed split inference: tail(head(image)). With no bottleneck this is
/// bitwise identical to the unsplit model.
template <typename S>
TensorT<S> composed_forward(const ModelT<S>& head, const ModelT<S>& tail, const TensorT<S>& image) {
  return forward(tail, forward(head, image));
}

void checkpoint_save(const Model& model, const std::string& path);
Model checkpoint_load(const std::string& path);

}  // namespace isplit
