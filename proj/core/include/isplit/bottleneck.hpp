#pragma once

#include <cstdint>
#include <vector>

#include "isplit/model.hpp"
#include "isplit/train.hpp"

namespace isplit {

/// Under-complete autoencoder geometry at a target layer: two stride-2 conv
/// encoder layers, two stride-2 transposed-conv decoder layers, latent
/// channel count chosen from the compression rate.
struct BottleneckSpec {
  int target_layer = -1;
  std::vector<int> input_shape;  // (z, n, m) of the split layer output
  double rate = 0.9;             // fraction of elements removed
  int mid_channels = 0;
  int latent_channels = 0;
  std::vector<int> latent_shape;  // (latent_channels, ceil(n/4), ceil(m/4))
  // Raised when the element budget cannot hold even one latent channel; the
  // compression bound is then reported as violated rather than silently met.
  bool clamp_warning = false;

  long long input_elements() const { return TensorF::shape_numel(input_shape); }
  long long encoded_elements() const { return TensorF::shape_numel(latent_shape); }
  long long budget_elements() const {
    return static_cast<long long>(
        std::ceil((1.0 - rate) * static_cast<double>(input_elements())));
  }
};

BottleneckSpec build_bottleneck(const std::vector<int>& input_shape, double rate);
BottleneckSpec build_bottleneck(const Model& model, int target_layer, double rate);

/// Spec plus initialized encoder/decoder weights. The autoencoder is kept as
/// one 6-layer sequential model (conv, relu, conv, tconv, relu, tconv) so the
/// training loop and checkpoint format apply unchanged; encoder() and
/// decoder() slice it.
struct Bottleneck {
  BottleneckSpec spec;
  Model ae;  // input (z,n,m) -> latent -> reconstruction (z,n,m)
  bool ae_trained = false;

  Model encoder() const { return slice_model(ae, 0, 2, ae.input_shape, 0); }
  Model decoder() const { return slice_model(ae, 3, 5, spec.latent_shape, 0); }
};

Bottleneck make_bottleneck(const BottleneckSpec& spec, std::uint64_t seed);

/// Phase 1: trains only the autoencoder on the frozen model's feature maps at
/// the target layer. The model is untouched (taken const); returns the
/// per-epoch reconstruction-loss history.
std::vector<double> train_ae(const Model& model, Bottleneck& bottleneck,
                             const std::vector<TensorF>& images, const std::vector<int>& indices,
                             const TrainConfig& cfg);

/// Phase 2: end-to-end fine-tuning of model + bottleneck. Returns per-epoch
/// accuracy on `eval_indices` (falls back to the training subset when empty).
/// Throws unless train_ae ran first or `allow_phase_skip` is set.
std::vector<double> finetune(Model& model, Bottleneck& bottleneck,
                             const std::vector<TensorF>& images, const std::vector<int>& labels,
                             const std::vector<int>& indices, const TrainConfig& cfg,
                             const std::vector<int>& eval_indices = {},
                             bool allow_phase_skip = false);

/// Full composed model: layers [0..T], encoder, decoder, layers [T+1..].
Model assemble_full(const Model& model, const Bottleneck& bottleneck);

/// Deployable partition: head = layers [0..T] + encoder, tail = decoder +
/// layers [T+1..]. Head output element count equals the encoded element
/// count.
SplitPlan assemble(const Model& model, const Bottleneck& bottleneck);

/// Debug identity override: a plain split with no bottleneck; composition is
/// bitwise identical to the unsplit model.
SplitPlan assemble_identity(const Model& model, int target_layer);

/// Feature maps of the model at `target_layer` for the indexed images.
std::vector<TensorF> layer_features(const Model& model, int target_layer,
                                    const std::vector<TensorF>& images,
                                    const std::vector<int>& indices);

}  // namespace isplit
