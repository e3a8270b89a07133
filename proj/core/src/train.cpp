#include "isplit/train.hpp"

namespace isplit {

TrainConfig::Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return TrainConfig::Optimizer::adam;
  if (s == "sgd") return TrainConfig::Optimizer::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

TrainConfig::Loss loss_from_string(const std::string& s) {
  if (s == "mse_recon") return TrainConfig::Loss::mse_recon;
  if (s == "cross_entropy") return TrainConfig::Loss::cross_entropy;
  if (s == "mse_onehot") return TrainConfig::Loss::mse_onehot;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(TrainConfig::Optimizer o) {
  return o == TrainConfig::Optimizer::adam ? "adam" : "sgd";
}

std::string to_string(TrainConfig::Loss l) {
  switch (l) {
    case TrainConfig::Loss::mse_recon: return "mse_recon";
    case TrainConfig::Loss::cross_entropy: return "cross_entropy";
    case TrainConfig::Loss::mse_onehot: return "mse_onehot";
  }
  return "cross_entropy";
}

double accuracy(const Model& model, const std::vector<TensorF>& images,
                const std::vector<int>& labels, const std::vector<int>& indices) {
  if (indices.empty()) throw DataError("accuracy over empty index set");
  long long correct = 0;
  for (int i : indices)
    if (predict_class(model, images[i]) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double composed_accuracy(const Model& head, const Model& tail, const std::vector<TensorF>& images,
                         const std::vector<int>& labels, const std::vector<int>& indices) {
  if (indices.empty()) throw DataError("accuracy over empty index set");
  long long correct = 0;
  for (int i : indices) {
    const TensorF logits = composed_forward(head, tail, images[i]);
    int best = 0;
    for (std::size_t k = 1; k < logits.data.size(); ++k)
      if (logits.data[k] > logits.data[best]) best = static_cast<int>(k);
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

namespace {

// Shared mini-batch loop. `make_loss` appends the loss node for one sample
// onto the sample's trace.
std::vector<double> train_loop(
    Model& model, const std::vector<int>& indices, const TrainConfig& cfg,
    const std::function<const TensorF&(int)>& input_of,
    const std::function<TensorId(Tape<float>&, ForwardTrace<float>&, int)>& make_loss,
    const std::function<void(int)>& on_epoch) {
  cfg.validate();
  if (indices.empty()) throw DataError("training over empty index set");

  std::vector<TensorF*> params = collect_params(model);
  std::vector<TensorF> grad_acc(params.size());
  AdamState<float> adam;
  Rng rng(cfg.seed);
  std::vector<int> order = indices;
  std::vector<double> history;
  history.reserve(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = 0; k < params.size(); ++k) grad_acc[k] = TensorF::zeros(params[k]->shape);
      for (std::size_t s = start; s < stop; ++s) {
        const int idx = order[s];
        ForwardTrace<float> trace = forward_retaining(model, input_of(idx));
        const TensorId loss_id = make_loss(trace.tape, trace, idx);
        epoch_loss += static_cast<double>(trace.tape.value(loss_id).data[0]);
        const GradientSet<float> gs = trace.tape.backward(loss_id);
        std::size_t k = 0;
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
          for (TensorId pid : trace.param_ids[li]) {
            const TensorF& g = gs.at(pid);
            for (std::size_t j = 0; j < g.data.size(); ++j) grad_acc[k].data[j] += g.data[j];
            ++k;
          }
        }
      }
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (auto& g : grad_acc)
        for (auto& v : g.data) v *= inv;
      std::vector<const TensorF*> grad_ptrs;
      grad_ptrs.reserve(params.size());
      for (const auto& g : grad_acc) grad_ptrs.push_back(&g);
      if (cfg.optimizer == TrainConfig::Optimizer::adam)
        adam_step(params, grad_ptrs, adam, cfg.lr);
      else
        sgd_step(params, grad_ptrs, cfg.lr);
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch);
  }
  return history;
}

}  // namespace

std::vector<double> train_classifier(Model& model, const std::vector<TensorF>& images,
                                     const std::vector<int>& labels,
                                     const std::vector<int>& indices, const TrainConfig& cfg,
                                     const std::function<void(int)>& on_epoch) {
  if (cfg.loss == TrainConfig::Loss::mse_recon)
    throw ConfigError("mse_recon is a reconstruction loss; classifier training needs "
                      "cross_entropy or mse_onehot");
  const int c = model.class_count;
  auto input_of = [&](int idx) -> const TensorF& { return images[idx]; };
  auto make_loss = [&](Tape<float>& tape, ForwardTrace<float>& trace, int idx) -> TensorId {
    if (cfg.loss == TrainConfig::Loss::cross_entropy)
      return tape.softmax_cross_entropy(trace.logits, labels[idx]);
    TensorF onehot = TensorF::zeros({c});
    if (labels[idx] < 0 || labels[idx] >= c)
      throw DataError("label " + std::to_string(labels[idx]) + " out of class range");
    onehot.data[labels[idx]] = 1.0f;
    return tape.mse(trace.logits, tape.leaf(std::move(onehot)));
  };
  return train_loop(model, indices, cfg, input_of, make_loss, on_epoch);
}

std::vector<double> train_autoencoder(Model& ae, const std::vector<TensorF>& features,
                                      const TrainConfig& cfg) {
  if (cfg.loss != TrainConfig::Loss::mse_recon)
    throw ConfigError("autoencoder training uses the mse_recon loss");
  std::vector<int> indices(features.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  auto input_of = [&](int idx) -> const TensorF& { return features[idx]; };
  auto make_loss = [&](Tape<float>& tape, ForwardTrace<float>& trace, int idx) -> TensorId {
    return tape.mse(trace.logits, tape.leaf(features[idx]));
  };
  return train_loop(ae, indices, cfg, input_of, make_loss, {});
}

}  // namespace isplit
