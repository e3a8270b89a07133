#include "isplit/bottleneck.hpp"

#include <cmath>
#include <sstream>

namespace isplit {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Output padding restoring `target` from `in` through one stride-2 k3 p1
// transposed conv: out = 2*in - 1 + op.
int out_pad_for(int in, int target) {
  const int op = target - (2 * in - 1);
  if (op < 0 || op > 1)
    throw ShapeError("transposed conv cannot restore extent " + std::to_string(target) +
                     " from " + std::to_string(in));
  return op;
}

}  // namespace

BottleneckSpec build_bottleneck(const std::vector<int>& input_shape, double rate) {
  if (input_shape.size() != 3)
    throw ShapeError("bottleneck input shape must be (z,n,m), got " +
                     TensorF::shape_string(input_shape));
  const int z = input_shape[0], n = input_shape[1], m = input_shape[2];
  if (n < 4 || m < 4)
    throw ShapeError("bottleneck needs spatial dims >= 4 for two stride-2 halvings, got " +
                     TensorF::shape_string(input_shape));
  if (!(rate > 0.0 && rate < 1.0))
    throw ConfigError("compression rate must lie in (0,1), got " + std::to_string(rate));

  BottleneckSpec spec;
  spec.input_shape = input_shape;
  spec.rate = rate;
  const int n2 = ceil_div(n, 4), m2 = ceil_div(m, 4);
  const double budget = (1.0 - rate) * static_cast<double>(z) * n * m;
  const long long channels = static_cast<long long>(std::floor(budget / (n2 * m2)));
  spec.latent_channels = static_cast<int>(std::max<long long>(1, channels));
  spec.clamp_warning = channels < 1;
  spec.latent_shape = {spec.latent_channels, n2, m2};
  spec.mid_channels = std::max(1, (z + spec.latent_channels + 1) / 2);
  return spec;
}

BottleneckSpec build_bottleneck(const Model& model, int target_layer, double rate) {
  if (target_layer < 0 || target_layer >= model.last_index())
    throw ShapeError("bottleneck target layer " + std::to_string(target_layer) +
                     " out of range [0," + std::to_string(model.last_index()) + ")");
  BottleneckSpec spec = build_bottleneck(model.layers[target_layer].output_shape, rate);
  spec.target_layer = target_layer;
  return spec;
}

Bottleneck make_bottleneck(const BottleneckSpec& spec, std::uint64_t seed) {
  const int z = spec.input_shape[0], n = spec.input_shape[1], m = spec.input_shape[2];
  const int n1 = ceil_div(n, 2), m1 = ceil_div(m, 2);
  const int n2 = spec.latent_shape[1], m2 = spec.latent_shape[2];
  std::ostringstream arch;
  arch << "bn_enc1@conv:" << spec.mid_channels << "k3s2p1,"
       << "bn_enc_relu@relu,"
       << "bn_enc2@conv:" << spec.latent_channels << "k3s2p1,"
       << "bn_dec1@tconv:" << spec.mid_channels << "k3s2p1o" << out_pad_for(n2, n1) << "x"
       << out_pad_for(m2, m1) << ","
       << "bn_dec_relu@relu,"
       << "bn_dec2@tconv:" << z << "k3s2p1o" << out_pad_for(n1, n) << "x" << out_pad_for(m1, m);
  Bottleneck b;
  b.spec = spec;
  b.ae = build_model(arch.str(), spec.input_shape, 0, seed);
  if (b.ae.layers[2].output_shape != spec.latent_shape)
    throw ShapeError("bottleneck latent shape mismatch");
  if (b.ae.layers.back().output_shape != spec.input_shape)
    throw ShapeError("bottleneck decoder does not restore the input shape");
  return b;
}

std::vector<TensorF> layer_features(const Model& model, int target_layer,
                                    const std::vector<TensorF>& images,
                                    const std::vector<int>& indices) {
  const Model head = slice_model(model, 0, target_layer, model.input_shape, 0);
  std::vector<TensorF> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(forward(head, images[i]));
  return out;
}

std::vector<double> train_ae(const Model& model, Bottleneck& bottleneck,
                             const std::vector<TensorF>& images, const std::vector<int>& indices,
                             const TrainConfig& cfg) {
  if (bottleneck.spec.target_layer < 0 || bottleneck.spec.target_layer >= model.last_index())
    throw ShapeError("bottleneck has no valid target layer for this model");
  if (model.layers[bottleneck.spec.target_layer].output_shape != bottleneck.spec.input_shape)
    throw ShapeError("bottleneck built for shape " +
                     TensorF::shape_string(bottleneck.spec.input_shape) + " but layer " +
                     std::to_string(bottleneck.spec.target_layer) + " outputs " +
                     TensorF::shape_string(model.layers[bottleneck.spec.target_layer].output_shape));
  TrainConfig ae_cfg = cfg;
  ae_cfg.loss = TrainConfig::Loss::mse_recon;
  // The head is frozen, so its outputs are fixed; cache them once.
  const std::vector<TensorF> features =
      layer_features(model, bottleneck.spec.target_layer, images, indices);
  auto history = train_autoencoder(bottleneck.ae, features, ae_cfg);
  if (cfg.epochs > 0) bottleneck.ae_trained = true;
  return history;
}

Model assemble_full(const Model& model, const Bottleneck& bottleneck) {
  const int t = bottleneck.spec.target_layer;
  Model out;
  out.input_shape = model.input_shape;
  out.class_count = model.class_count;
  out.meta = model.meta;
  auto append = [&out](const Model& src, int first, int last) {
    for (int i = first; i <= last; ++i) {
      LayerSpec l = src.layers[i];
      l.index = static_cast<int>(out.layers.size());
      out.layers.push_back(std::move(l));
      out.params.push_back(src.params[i]);
    }
  };
  append(model, 0, t);
  append(bottleneck.ae, 0, bottleneck.ae.last_index());
  append(model, t + 1, model.last_index());
  // Re-infer the shape chain; the decoder restores the split layer's shape,
  // so downstream shapes are unchanged.
  std::vector<int> cur = out.input_shape;
  for (auto& l : out.layers) {
    l.output_shape = infer_output_shape(l, cur);
    cur = l.output_shape;
  }
  return out;
}

SplitPlan assemble(const Model& model, const Bottleneck& bottleneck) {
  const Model full = assemble_full(model, bottleneck);
  const int latent_layer = bottleneck.spec.target_layer + 3;  // after bn_enc2
  SplitPlan plan = split(full, latent_layer);
  plan.target_layer = bottleneck.spec.target_layer;
  return plan;
}

SplitPlan assemble_identity(const Model& model, int target_layer) {
  return split(model, target_layer);
}

std::vector<double> finetune(Model& model, Bottleneck& bottleneck,
                             const std::vector<TensorF>& images, const std::vector<int>& labels,
                             const std::vector<int>& indices, const TrainConfig& cfg,
                             const std::vector<int>& eval_indices, bool allow_phase_skip) {
  if (!bottleneck.ae_trained && !allow_phase_skip)
    throw ConfigError("finetune requested before the ae phase; pass allow_phase_skip to override");
  Model full = assemble_full(model, bottleneck);
  const std::vector<int>& acc_indices = eval_indices.empty() ? indices : eval_indices;
  std::vector<double> acc_history;
  train_classifier(full, images, labels, indices, cfg, [&](int) {
    acc_history.push_back(accuracy(full, images, labels, acc_indices));
  });

  // Scatter the updated parameters back into the model and the bottleneck.
  const int t = bottleneck.spec.target_layer;
  for (int i = 0; i <= t; ++i) model.params[i] = full.params[i];
  for (int i = 0; i < 6; ++i) bottleneck.ae.params[i] = full.params[t + 1 + i];
  for (int i = t + 1; i <= model.last_index(); ++i) model.params[i] = full.params[i + 6];
  return acc_history;
}

}  // namespace isplit
