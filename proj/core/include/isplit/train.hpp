#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "isplit/model.hpp"
#include "isplit/optim.hpp"
#include "isplit/rng.hpp"

namespace isplit {

struct TrainConfig {
  enum class Phase { ae, finetune };
  enum class Optimizer { adam, sgd };
  enum class Loss { mse_recon, cross_entropy, mse_onehot };

  Phase phase = Phase::finetune;
  int epochs = 1;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  int batch_size = 32;
  Loss loss = Loss::cross_entropy;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (lr < 0) throw ConfigError("lr must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

TrainConfig::Optimizer optimizer_from_string(const std::string& s);
TrainConfig::Loss loss_from_string(const std::string& s);
std::string to_string(TrainConfig::Optimizer o);
std::string to_string(TrainConfig::Loss l);

inline std::vector<TensorF*> collect_params(Model& m) {
  std::vector<TensorF*> out;
  for (auto& layer_params : m.params)
    for (auto& p : layer_params) out.push_back(&p);
  return out;
}

/// Fraction of images whose argmax logit equals the label.
double accuracy(const Model& model, const std::vector<TensorF>& images,
                const std::vector<int>& labels, const std::vector<int>& indices);

/// Fraction correct for a head/tail composition.
double composed_accuracy(const Model& head, const Model& tail, const std::vector<TensorF>& images,
                         const std::vector<int>& labels, const std::vector<int>& indices);

/// Seeded mini-batch training of a classifier on the indexed subset.
/// Returns the mean per-sample loss of each epoch. `on_epoch` (optional)
/// runs after each epoch's update.
std::vector<double> train_classifier(Model& model, const std::vector<TensorF>& images,
                                     const std::vector<int>& labels,
                                     const std::vector<int>& indices, const TrainConfig& cfg,
                                     const std::function<void(int)>& on_epoch = {});

/// Trains a reconstruction model: input == target, MSE loss.
std::vector<double> train_autoencoder(Model& ae, const std::vector<TensorF>& features,
                                      const TrainConfig& cfg);

}  // namespace isplit
