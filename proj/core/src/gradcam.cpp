#include "isplit/gradcam.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace isplit {

std::string to_string(CuiReduction r) { return r == CuiReduction::sum ? "sum" : "mean"; }

std::string to_string(CuiScope s) {
  switch (s) {
    case CuiScope::per_image: return "per_image";
    case CuiScope::per_class: return "per_class";
    case CuiScope::general: return "general";
  }
  return "general";
}

CuiReduction cui_reduction_from_string(const std::string& s) {
  if (s == "sum") return CuiReduction::sum;
  if (s == "mean") return CuiReduction::mean;
  throw ConfigError("unknown CUI reduction '" + s + "'");
}

double CuiCurve::value_at(int layer_index) const {
  for (std::size_t i = 0; i < layer_indices.size(); ++i)
    if (layer_indices[i] == layer_index) return values[i];
  throw ShapeError("layer " + std::to_string(layer_index) + " not in curve");
}

int CuiCurve::argmax_layer() const {
  if (values.empty()) throw ShapeError("empty curve");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] >= values[best]) best = i;  // deeper wins ties
  return layer_indices[best];
}

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ISPLIT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::vector<std::vector<double>> per_image_cui_rows(const Model& model,
                                                    const std::vector<TensorF>& images,
                                                    const std::vector<int>& labels,
                                                    const std::vector<int>& image_ids,
                                                    CuiReduction reduction, SaliencyMethod method,
                                                    int threads) {
  const std::vector<int> layers = cui_layers(model);
  std::vector<std::vector<double>> rows(image_ids.size());
  const int nthreads = std::min<int>(resolve_thread_count(threads),
                                     std::max<int>(1, static_cast<int>(image_ids.size())));
  auto worker = [&](int t) {
    for (std::size_t i = t; i < image_ids.size(); i += nthreads) {
      const int id = image_ids[i];
      const auto maps = importance_maps(model, images[id], labels[id], layers, method, id);
      std::vector<double> row(layers.size());
      for (std::size_t li = 0; li < layers.size(); ++li) row[li] = per_image_cui(maps[li], reduction);
      rows[i] = std::move(row);
    }
  };
  if (nthreads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  return rows;
}

namespace {

CuiCurve curve_common(const Model& model, const std::vector<TensorF>& images,
                      const std::vector<int>& labels, const std::vector<int>& view,
                      const CuiOptions& opts, SaliencyMethod method) {
  if (images.size() != labels.size()) throw DataError("image/label count mismatch");
  std::vector<char> in_scope(model.class_count, opts.class_subset.empty() ? 1 : 0);
  for (int c : opts.class_subset) {
    if (c < 0 || c >= model.class_count)
      throw DataError("class " + std::to_string(c) + " out of range");
    in_scope[c] = 1;
  }
  std::vector<int> candidates = view;
  if (candidates.empty())
    for (std::size_t i = 0; i < images.size(); ++i) candidates.push_back(static_cast<int>(i));
  std::vector<int> ids;
  for (int i : candidates) {
    if (i < 0 || i >= static_cast<int>(images.size()))
      throw DataError("image index " + std::to_string(i) + " out of range");
    if (labels[i] < 0 || labels[i] >= model.class_count)
      throw DataError("label " + std::to_string(labels[i]) + " out of range");
    if (in_scope[labels[i]]) ids.push_back(i);
  }
  if (ids.empty()) throw DataError("empty image set for CUI computation");

  const std::vector<int> layers = cui_layers(model);
  const auto rows =
      per_image_cui_rows(model, images, labels, ids, opts.reduction, method, opts.threads);

  // Per-class sums first (image order within class), then combine across
  // classes; grouping keeps general == mean of per-class curves exact for
  // equal power-of-two class sizes.
  std::vector<std::vector<double>> class_sums(model.class_count,
                                              std::vector<double>(layers.size(), 0.0));
  std::vector<long long> class_counts(model.class_count, 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int c = labels[ids[i]];
    class_counts[c] += 1;
    for (std::size_t li = 0; li < layers.size(); ++li) class_sums[c][li] += rows[i][li];
  }

  CuiCurve curve;
  curve.layer_indices = layers;
  for (int l : layers) curve.layer_names.push_back(model.layers[l].name);
  curve.reduction = opts.reduction;
  curve.class_subset = opts.class_subset;
  std::sort(curve.class_subset.begin(), curve.class_subset.end());
  curve.image_count = static_cast<int>(ids.size());
  curve.values.assign(layers.size(), 0.0);

  int active_classes = 0;
  for (int c = 0; c < model.class_count; ++c)
    if (class_counts[c] > 0) ++active_classes;

  if (opts.class_balanced) {
    for (int c = 0; c < model.class_count; ++c) {
      if (class_counts[c] == 0) continue;
      for (std::size_t li = 0; li < layers.size(); ++li)
        curve.values[li] += class_sums[c][li] / static_cast<double>(class_counts[c]);
    }
    for (auto& v : curve.values) v /= static_cast<double>(active_classes);
  } else {
    for (int c = 0; c < model.class_count; ++c)
      for (std::size_t li = 0; li < layers.size(); ++li) curve.values[li] += class_sums[c][li];
    for (auto& v : curve.values) v /= static_cast<double>(ids.size());
  }

  if (ids.size() == 1) {
    curve.scope = CuiScope::per_image;
  } else if (opts.class_subset.size() == 1) {
    curve.scope = CuiScope::per_class;
    curve.scope_class = opts.class_subset[0];
  } else {
    curve.scope = CuiScope::general;
  }
  return curve;
}

}  // namespace

CuiCurve cui_curve(const Model& model, const std::vector<TensorF>& images,
                   const std::vector<int>& labels, const std::vector<int>& view,
                   const CuiOptions& opts) {
  return curve_common(model, images, labels, view, opts, opts.method);
}

CuiCurve gradients_baseline_curve(const Model& model, const std::vector<TensorF>& images,
                                  const std::vector<int>& labels, const std::vector<int>& view,
                                  const CuiOptions& opts) {
  return curve_common(model, images, labels, view, opts, SaliencyMethod::gradients);
}

std::vector<int> select_split_points(const CuiCurve& curve) {
  const auto& v = curve.values;
  const std::size_t n = v.size();
  if (n == 0) return {};
  std::vector<std::size_t> candidates;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[j + 1] == v[i]) ++j;  // plateau run [i, j]
    const bool left_ok = i == 0 || v[i - 1] < v[i];
    const bool right_ok = j == n - 1 || v[j + 1] < v[i];
    if (left_ok && right_ok) candidates.push_back(j);  // deepest plateau element
    i = j + 1;
  }
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a > b;  // equal value: deeper layer first
  });
  std::vector<int> out;
  out.reserve(candidates.size());
  for (std::size_t c : candidates) out.push_back(curve.layer_indices[c]);
  return out;
}

std::vector<int> cde_candidates(const std::vector<long long>& sizes) {
  std::vector<int> out;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    if (sizes[i + 1] < sizes[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> cde_candidate_layers(const Model& model) {
  const std::vector<int> layers = cui_layers(model);
  const std::vector<long long> all_sizes = layer_sizes(model);
  std::vector<long long> sizes;
  sizes.reserve(layers.size());
  for (int l : layers) sizes.push_back(all_sizes[l]);
  std::vector<int> out;
  for (int pos : cde_candidates(sizes)) out.push_back(layers[pos]);
  return out;
}

double sanity_check(const Model& model, const TensorF& image, int layer, std::uint64_t seed,
                    int class_id) {
  detail::check_cui_layer(model, layer);
  const int c = class_id >= 0 ? class_id : predict_class(model, image);

  Model randomized = model;
  Rng rng(seed);
  for (std::size_t i = 0; i < randomized.layers.size(); ++i) {
    if (randomized.layers[i].index <= layer || !randomized.layers[i].has_params()) continue;
    const LayerSpec& l = randomized.layers[i];
    const std::vector<int> in_shape =
        i == 0 ? randomized.input_shape : randomized.layers[i - 1].output_shape;
    long long fan_in = l.kind == LayerKind::dense
                           ? in_shape[0]
                           : static_cast<long long>(in_shape[0]) * l.kernel * l.kernel;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& p : randomized.params[i])
      for (auto& v : p.data) v = static_cast<float>(rng.uniform(-bound, bound));
  }

  const auto a = gradcam_map(model, image, c, layer);
  const auto b = gradcam_map(randomized, image, c, layer);
  double acc = 0;
  for (std::size_t i = 0; i < a.map.data.size(); ++i)
    acc += std::abs(static_cast<double>(a.map.data[i]) - static_cast<double>(b.map.data[i]));
  return acc / static_cast<double>(a.map.numel());
}

}  // namespace isplit
