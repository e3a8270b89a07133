#include "isplit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "isplit/spearman.hpp"
#include "isplit/svg.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace isplit {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL + b * 0xBF58476D1CE4E5B9ULL +
                    c * 0x94D049BB133111EBULL + 0x2545F4914F6CDD1DULL;
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDULL;
  x ^= x >> 33;
  return x;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},      {"lr", c.lr},
              {"optimizer", to_string(c.optimizer)}, {"batch_size", c.batch_size},
              {"loss", to_string(c.loss)},           {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("loss")) c.loss = loss_from_string(j.at("loss").get<std::string>());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for write");
  out << text;
  if (!out) throw DataError("short write to '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) throw DataError("quantile of empty sample");
  const double h = static_cast<double>(v.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

ResampleStats resample_core(const std::vector<char>& correct, int sample_size, int trials,
                            std::uint64_t seed) {
  const int n = static_cast<int>(correct.size());
  if (n == 0) throw DataError("resampling over an empty index set");
  if (trials < 1) throw ConfigError("stats trials must be >= 1");
  const int k = std::min(sample_size, n);
  if (k < 1) throw ConfigError("stats sample size must be >= 1");

  Rng rng(seed);
  ResampleStats stats;
  std::vector<int> work(n);
  for (int trial = 0; trial < trials; ++trial) {
    for (int i = 0; i < n; ++i) work[i] = i;
    long long hits = 0;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(work[i], work[j]);
      hits += correct[work[i]] ? 1 : 0;
    }
    stats.per_trial.push_back(static_cast<double>(hits) / static_cast<double>(k));
  }
  double sum = 0;
  for (double a : stats.per_trial) sum += a;
  stats.mean = sum / static_cast<double>(trials);
  std::vector<double> sorted = stats.per_trial;
  std::sort(sorted.begin(), sorted.end());
  stats.q1 = quantile_sorted(sorted, 0.25);
  stats.median = quantile_sorted(sorted, 0.5);
  stats.q3 = quantile_sorted(sorted, 0.75);
  return stats;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.base_train.phase = TrainConfig::Phase::finetune;
  cfg.base_train.epochs = 30;
  cfg.base_train.lr = 1e-3;
  cfg.base_train.loss = TrainConfig::Loss::cross_entropy;
  cfg.base_train.seed = 1;

  cfg.ae_train.phase = TrainConfig::Phase::ae;
  cfg.ae_train.epochs = 200;
  cfg.ae_train.lr = 5e-3;
  cfg.ae_train.loss = TrainConfig::Loss::mse_recon;
  cfg.ae_train.seed = 1;

  cfg.finetune_train.phase = TrainConfig::Phase::finetune;
  cfg.finetune_train.epochs = 100;
  cfg.finetune_train.lr = 1e-4;
  cfg.finetune_train.loss = TrainConfig::Loss::cross_entropy;
  cfg.finetune_train.seed = 1;
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"source", cfg.dataset_source}, {"idx_images", cfg.idx_images},
                  {"idx_labels", cfg.idx_labels}, {"classes", cfg.synth_classes},
                  {"per_class", cfg.synth_per_class}, {"image_size", cfg.synth_image_size},
                  {"profile", cfg.synth_profile},  {"seed", cfg.data_seed},
                  {"train_frac", cfg.train_frac},  {"val_frac", cfg.val_frac}};
  j["architecture"] = cfg.architecture;
  j["seed"] = cfg.seed;
  j["base_train"] = train_config_to_json(cfg.base_train);
  j["cui"] = {{"reduction", cfg.cui_reduction},
              {"class_subset", cfg.class_subset},
              {"class_balanced", cfg.class_balanced},
              {"threads", cfg.threads}};
  j["candidates"] = {{"mode", cfg.candidates_mode},
                     {"layers", cfg.candidate_layers},
                     {"max", cfg.max_candidates}};
  j["bottleneck"] = {{"rate", cfg.compression_rate}};
  j["ae_train"] = train_config_to_json(cfg.ae_train);
  j["finetune_train"] = train_config_to_json(cfg.finetune_train);
  j["channel"] = {{"bandwidth_bytes_per_s", cfg.channel_bandwidth_bytes_per_s},
                  {"latency_s", cfg.channel_latency_s}};
  j["stats"] = {{"trials", cfg.stats_trials},
                {"sample_size", cfg.stats_sample_size},
                {"seed", cfg.stats_seed}};
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg = default_config();
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("source")) cfg.dataset_source = d.at("source").get<std::string>();
      if (d.contains("idx_images")) cfg.idx_images = d.at("idx_images").get<std::string>();
      if (d.contains("idx_labels")) cfg.idx_labels = d.at("idx_labels").get<std::string>();
      if (d.contains("classes")) cfg.synth_classes = d.at("classes").get<int>();
      if (d.contains("per_class")) cfg.synth_per_class = d.at("per_class").get<int>();
      if (d.contains("image_size")) cfg.synth_image_size = d.at("image_size").get<int>();
      if (d.contains("profile")) cfg.synth_profile = d.at("profile").get<std::string>();
      if (d.contains("seed")) cfg.data_seed = d.at("seed").get<std::uint64_t>();
      if (d.contains("train_frac")) cfg.train_frac = d.at("train_frac").get<double>();
      if (d.contains("val_frac")) cfg.val_frac = d.at("val_frac").get<double>();
    }
    if (j.contains("architecture")) cfg.architecture = j.at("architecture").get<std::string>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("base_train")) cfg.base_train = train_config_from_json(j.at("base_train"), cfg.base_train);
    if (j.contains("cui")) {
      const auto& c = j.at("cui");
      if (c.contains("reduction")) cfg.cui_reduction = c.at("reduction").get<std::string>();
      if (c.contains("class_subset")) cfg.class_subset = c.at("class_subset").get<std::vector<int>>();
      if (c.contains("class_balanced")) cfg.class_balanced = c.at("class_balanced").get<bool>();
      if (c.contains("threads")) cfg.threads = c.at("threads").get<int>();
    }
    if (j.contains("candidates")) {
      const auto& c = j.at("candidates");
      if (c.contains("mode")) cfg.candidates_mode = c.at("mode").get<std::string>();
      if (c.contains("layers")) cfg.candidate_layers = c.at("layers").get<std::vector<int>>();
      if (c.contains("max")) cfg.max_candidates = c.at("max").get<int>();
    }
    if (j.contains("bottleneck") && j.at("bottleneck").contains("rate"))
      cfg.compression_rate = j.at("bottleneck").at("rate").get<double>();
    if (j.contains("ae_train")) cfg.ae_train = train_config_from_json(j.at("ae_train"), cfg.ae_train);
    if (j.contains("finetune_train"))
      cfg.finetune_train = train_config_from_json(j.at("finetune_train"), cfg.finetune_train);
    if (j.contains("channel")) {
      const auto& c = j.at("channel");
      if (c.contains("bandwidth_bytes_per_s"))
        cfg.channel_bandwidth_bytes_per_s = c.at("bandwidth_bytes_per_s").get<double>();
      if (c.contains("latency_s")) cfg.channel_latency_s = c.at("latency_s").get<double>();
    }
    if (j.contains("stats")) {
      const auto& s = j.at("stats");
      if (s.contains("trials")) cfg.stats_trials = s.at("trials").get<int>();
      if (s.contains("sample_size")) cfg.stats_sample_size = s.at("sample_size").get<int>();
      if (s.contains("seed")) cfg.stats_seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }

  if (cfg.dataset_source != "synth" && cfg.dataset_source != "idx")
    throw ConfigError("dataset.source must be synth or idx");
  if (cfg.dataset_source == "idx") {
    if (!fs::exists(cfg.idx_images))
      throw ConfigError("dataset.idx_images '" + cfg.idx_images + "' does not exist");
    if (!fs::exists(cfg.idx_labels))
      throw ConfigError("dataset.idx_labels '" + cfg.idx_labels + "' does not exist");
  }
  if (!(cfg.compression_rate > 0.0 && cfg.compression_rate < 1.0))
    throw ConfigError("bottleneck.rate must lie in (0,1)");
  if (cfg.candidates_mode != "auto-cui" && cfg.candidates_mode != "auto-cde" &&
      cfg.candidates_mode != "explicit")
    throw ConfigError("candidates.mode must be auto-cui, auto-cde or explicit");
  if (cfg.candidates_mode == "explicit" && cfg.candidate_layers.empty())
    throw ConfigError("candidates.mode=explicit needs candidates.layers");
  cui_reduction_from_string(cfg.cui_reduction);
  cfg.base_train.validate();
  cfg.ae_train.validate();
  cfg.finetune_train.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_text(path)); }

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  write_text(path, config_to_json(cfg));
}

Dataset stage_data(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.dataset_source == "synth") {
    ds = synth_dataset(cfg.synth_classes, cfg.synth_per_class, cfg.synth_image_size,
                       cfg.synth_profile, cfg.data_seed);
  } else {
    ds = load_idx(cfg.idx_images, cfg.idx_labels);
  }
  assign_split_tags(ds, cfg.train_frac, cfg.val_frac, mix_seed(cfg.data_seed, 0xDA7A, 0));
  return ds;
}

Model stage_train(const ExperimentConfig& cfg, const Dataset& ds) {
  if (ds.images.empty()) throw DataError("empty dataset");
  fs::create_directories(cfg.output_dir);
  Model model = build_model(cfg.architecture, ds.images[0].shape, ds.class_count, cfg.seed);
  model.meta.dataset_id = ds.id;
  model.meta.epochs = cfg.base_train.epochs;
  const auto history = train_classifier(model, ds.images, ds.labels, ds.indices(SplitTag::train),
                                        cfg.base_train);
  const fs::path out(cfg.output_dir);
  checkpoint_save(model, (out / "model.ispl").string());
  std::vector<CsvRow> rows;
  for (std::size_t e = 0; e < history.size(); ++e)
    rows.push_back({std::to_string(e), fmt_double(history[e])});
  write_csv((out / "train_history.csv").string(), {"epoch", "mean_loss"}, rows);
  return model;
}

CuiStageResult stage_cui(const ExperimentConfig& cfg, const Dataset& ds, const Model& model) {
  fs::create_directories(cfg.output_dir);
  CuiOptions opts;
  opts.reduction = cui_reduction_from_string(cfg.cui_reduction);
  opts.class_subset = cfg.class_subset;
  opts.class_balanced = cfg.class_balanced;
  opts.threads = cfg.threads;
  const std::vector<int> val = ds.indices(SplitTag::val);
  const std::vector<int>& view = val.empty() ? ds.all_indices() : val;

  CuiStageResult result;
  result.curve = cui_curve(model, ds.images, ds.labels, view, opts);
  result.curve.dataset_id = ds.id;
  result.gradients_curve = gradients_baseline_curve(model, ds.images, ds.labels, view, opts);
  result.gradients_curve.dataset_id = ds.id;
  result.cui_candidates = select_split_points(result.curve);
  result.cde_candidates = cde_candidate_layers(model);

  const fs::path out(cfg.output_dir);
  write_cui_csv((out / "cui.csv").string(), result.curve);
  write_cui_csv((out / "gradients_baseline.csv").string(), result.gradients_curve);

  PlotSeries cui_series{"CUI (grad-cam)", result.curve.values, "#e0a800", false, {}};
  for (int layer : result.cui_candidates)
    for (std::size_t i = 0; i < result.curve.layer_indices.size(); ++i)
      if (result.curve.layer_indices[i] == layer)
        cui_series.marker_positions.push_back(static_cast<int>(i));
  PlotSeries grad_series{"Gradients baseline", result.gradients_curve.values, "#888888", true, {}};
  write_plot_svg((out / "cui.svg").string(), "Layer importance (" + cfg.architecture + ")",
                 result.curve.layer_names, {cui_series, grad_series});
  return result;
}

std::vector<int> bottleneck_feasible_layers(const Model& model) {
  std::vector<int> out;
  for (const auto& l : model.layers) {
    if (l.index >= model.last_index()) continue;
    if (l.output_shape.size() != 3) continue;
    if (l.output_shape[1] >= 4 && l.output_shape[2] >= 4) out.push_back(l.index);
  }
  return out;
}

std::vector<int> choose_candidates(const ExperimentConfig& cfg, const Model& model,
                                   const CuiStageResult& cui) {
  const std::vector<int> feasible = bottleneck_feasible_layers(model);
  auto is_feasible = [&](int l) {
    return std::find(feasible.begin(), feasible.end(), l) != feasible.end();
  };
  std::vector<int> out;
  if (cfg.candidates_mode == "explicit") {
    for (int l : cfg.candidate_layers) {
      if (!is_feasible(l))
        throw ConfigError("candidate layer " + std::to_string(l) +
                          " cannot take a bottleneck (needs rank-3 output with spatial dims >= 4)");
      out.push_back(l);
    }
    return out;
  }
  const std::vector<int>& pool =
      cfg.candidates_mode == "auto-cde" ? cui.cde_candidates : cui.cui_candidates;
  for (int l : pool) {
    if (!is_feasible(l)) continue;
    out.push_back(l);
    if (static_cast<int>(out.size()) >= cfg.max_candidates) break;
  }
  if (out.empty()) throw StageError("retrain", "no feasible candidate split layers");
  return out;
}

RetrainResult retrain_split(const ExperimentConfig& cfg, const Dataset& ds, const Model& model,
                            int layer, const std::string& artifact_dir) {
  fs::create_directories(artifact_dir);
  const std::vector<int> train_idx = ds.indices(SplitTag::train);
  std::vector<int> val_idx = ds.indices(SplitTag::val);
  if (val_idx.empty()) val_idx = train_idx;
  std::vector<int> test_idx = ds.indices(SplitTag::test);
  if (test_idx.empty()) test_idx = val_idx;

  RetrainResult r;
  r.layer = layer;
  r.spec = build_bottleneck(model, layer, cfg.compression_rate);
  Bottleneck bn = make_bottleneck(r.spec, mix_seed(cfg.seed, layer, 0));

  TrainConfig ae_cfg = cfg.ae_train;
  ae_cfg.phase = TrainConfig::Phase::ae;
  ae_cfg.loss = TrainConfig::Loss::mse_recon;
  ae_cfg.seed = mix_seed(cfg.seed, layer, 1);
  r.ae_history = train_ae(model, bn, ds.images, train_idx, ae_cfg);

  Model tuned = model;
  TrainConfig ft_cfg = cfg.finetune_train;
  ft_cfg.phase = TrainConfig::Phase::finetune;
  ft_cfg.seed = mix_seed(cfg.seed, layer, 2);
  r.acc_history = finetune(tuned, bn, ds.images, ds.labels, train_idx, ft_cfg, val_idx);

  const SplitPlan plan = assemble(tuned, bn);
  r.val_accuracy = composed_accuracy(plan.head, plan.tail, ds.images, ds.labels, val_idx);
  r.test_accuracy = composed_accuracy(plan.head, plan.tail, ds.images, ds.labels, test_idx);

  const fs::path dir(artifact_dir);
  r.head_path = (dir / "head.ispl").string();
  r.tail_path = (dir / "tail.ispl").string();
  checkpoint_save(plan.head, r.head_path);
  checkpoint_save(plan.tail, r.tail_path);

  json sidecar;
  sidecar["layer"] = layer;
  sidecar["layer_name"] = model.layers[layer].name;
  sidecar["rate"] = cfg.compression_rate;
  sidecar["input_shape"] = r.spec.input_shape;
  sidecar["latent_shape"] = r.spec.latent_shape;
  sidecar["encoded_elements"] = r.spec.encoded_elements();
  sidecar["clamp_warning"] = r.spec.clamp_warning;
  sidecar["ae_loss_history"] = r.ae_history;
  sidecar["accuracy_history"] = r.acc_history;
  sidecar["val_accuracy"] = r.val_accuracy;
  sidecar["test_accuracy"] = r.test_accuracy;
  write_text((dir / "sidecar.json").string(), sidecar.dump(2) + "\n");
  return r;
}

std::vector<RetrainResult> stage_retrain(const ExperimentConfig& cfg, const Dataset& ds,
                                         const Model& model, const std::vector<int>& layers) {
  std::vector<RetrainResult> results(layers.size());
  const int nthreads = std::min<int>(resolve_thread_count(cfg.threads),
                                     std::max<int>(1, static_cast<int>(layers.size())));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex err_mu;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= layers.size() || failed.load()) return;
      try {
        const fs::path dir = fs::path(cfg.output_dir) / ("split_L" + std::to_string(layers[i]));
        results[i] = retrain_split(cfg, ds, model, layers[i], dir.string());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failed.load()) throw StageError("retrain", first_error);
  return results;
}

std::vector<SweepRow> sweep_report(const Model& model, const std::vector<RetrainResult>& results,
                                   const ChannelModel& channel) {
  std::vector<SweepRow> rows;
  for (const auto& r : results) {
    SweepRow row;
    row.layer = r.layer;
    row.layer_name = model.layers[r.layer].name;
    row.raw_bytes = r.spec.input_elements() * 4;
    row.encoded_bytes = r.spec.encoded_elements() * 4;
    row.est_transfer_s = estimate_transfer_s(static_cast<std::uint64_t>(row.encoded_bytes), channel);
    row.accuracy = r.val_accuracy;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.layer < b.layer;
  });
  return rows;
}

void stage_sweep(const ExperimentConfig& cfg, const Model& model, const CuiStageResult& cui,
                 const std::vector<RetrainResult>& results) {
  if (results.empty()) throw StageError("sweep", "no retrained splits to report");
  fs::create_directories(cfg.output_dir);
  const ChannelModel channel{cfg.channel_bandwidth_bytes_per_s, cfg.channel_latency_s};
  const std::vector<SweepRow> rows = sweep_report(model, results, channel);
  const fs::path out(cfg.output_dir);
  write_sweep_csv((out / "sweep.csv").string(), rows);

  // CUI value and measured accuracy at the evaluated candidates only.
  std::vector<double> cui_at, acc_at;
  std::vector<std::string> labels;
  for (const auto& row : rows) {
    cui_at.push_back(cui.curve.value_at(row.layer));
    acc_at.push_back(row.accuracy);
    labels.push_back(row.layer_name);
  }
  PlotSeries cui_series{"CUI", cui_at, "#e0a800", false, {}};
  PlotSeries acc_series{"post-split accuracy", acc_at, "#7030a0", true, {}};
  write_plot_svg((out / "sweep.svg").string(), "CUI vs retrained accuracy", labels,
                 {cui_series, acc_series});

  double rho = std::numeric_limits<double>::quiet_NaN();
  if (cui_at.size() >= 2) rho = spearman_rho(cui_at, acc_at);

  // Best layer: the highest-CUI retrained candidate.
  int best_layer = rows.front().layer;
  double best_cui = cui_at.front();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (cui_at[i] >= best_cui) {
      best_cui = cui_at[i];
      best_layer = rows[i].layer;
    }
  }

  json summary;
  summary["architecture"] = cfg.architecture;
  summary["dataset_id"] = model.meta.dataset_id;
  summary["seed"] = cfg.seed;
  summary["compression_rate"] = cfg.compression_rate;
  summary["cui_candidates_ranked"] = cui.cui_candidates;
  summary["cde_candidates"] = cui.cde_candidates;
  summary["spearman_cui_accuracy"] = rho;
  summary["best_layer_by_cui"] = best_layer;
  json cands = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i)
    cands.push_back({{"layer", rows[i].layer},
                     {"layer_name", rows[i].layer_name},
                     {"cui", cui_at[i]},
                     {"val_accuracy", rows[i].accuracy},
                     {"encoded_bytes", rows[i].encoded_bytes},
                     {"est_transfer_s", rows[i].est_transfer_s}});
  summary["candidates"] = cands;
  write_text((out / "summary.json").string(), summary.dump(2) + "\n");
}

namespace {

std::vector<char> correctness_mask(const std::function<int(int)>& predict, const Dataset& ds,
                                   const std::vector<int>& indices) {
  std::vector<char> correct(indices.size(), 0);
  for (std::size_t i = 0; i < indices.size(); ++i)
    correct[i] = predict(indices[i]) == ds.labels[indices[i]] ? 1 : 0;
  return correct;
}

}  // namespace

ResampleStats stats_resample(const Model& model, const Dataset& ds, const std::vector<int>& indices,
                             int sample_size, int trials, std::uint64_t seed) {
  const auto correct = correctness_mask(
      [&](int i) { return predict_class(model, ds.images[i]); }, ds, indices);
  return resample_core(correct, sample_size, trials, seed);
}

ResampleStats stats_resample(const Model& head, const Model& tail, const Dataset& ds,
                             const std::vector<int>& indices, int sample_size, int trials,
                             std::uint64_t seed) {
  const auto correct = correctness_mask(
      [&](int i) {
        const TensorF logits = composed_forward(head, tail, ds.images[i]);
        int best = 0;
        for (std::size_t k = 1; k < logits.data.size(); ++k)
          if (logits.data[k] > logits.data[best]) best = static_cast<int>(k);
        return best;
      },
      ds, indices);
  return resample_core(correct, sample_size, trials, seed);
}

void stage_stats(const ExperimentConfig& cfg, const Dataset& ds, const Model& model,
                 const CuiCurve& curve, const std::vector<RetrainResult>& results) {
  fs::create_directories(cfg.output_dir);
  std::vector<int> val = ds.indices(SplitTag::val);
  if (val.empty()) val = ds.all_indices();
  const int sample = std::min<int>(cfg.stats_sample_size, static_cast<int>(val.size()));

  const ResampleStats unsplit =
      stats_resample(model, ds, val, sample, cfg.stats_trials, cfg.stats_seed);

  std::vector<CsvRow> rows;
  auto add_rows = [&rows](const std::string& name, const ResampleStats& s) {
    for (std::size_t t = 0; t < s.per_trial.size(); ++t)
      rows.push_back({name, std::to_string(t), fmt_double(s.per_trial[t])});
  };
  add_rows("unsplit", unsplit);

  json stats_json;
  auto stats_to_json = [](const ResampleStats& s) {
    return json{{"mean", s.mean}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}};
  };
  stats_json["unsplit"] = stats_to_json(unsplit);

  const fs::path out(cfg.output_dir);
  if (!results.empty()) {
    // highest-CUI retrained candidate
    const RetrainResult* best = &results.front();
    for (const auto& r : results)
      if (curve.value_at(r.layer) > curve.value_at(best->layer)) best = &r;
    const Model head = checkpoint_load(best->head_path);
    const Model tail = checkpoint_load(best->tail_path);
    const ResampleStats split_stats =
        stats_resample(head, tail, ds, val, sample, cfg.stats_trials, cfg.stats_seed);
    add_rows("split_L" + std::to_string(best->layer), split_stats);
    stats_json["split_L" + std::to_string(best->layer)] = stats_to_json(split_stats);

    std::vector<int> test = ds.indices(SplitTag::test);
    if (test.empty()) test = val;
    const F1Report f1 = per_class_f1_report(model, head, tail, ds, test);
    write_f1_csv((out / "f1.csv").string(), f1);
    stats_json["f1_rank_rho"] = f1.rank_rho;
    stats_json["f1_undefined_classes"] = f1.undefined_classes;
  }

  write_csv((out / "stats.csv").string(), {"model", "trial", "accuracy"}, rows);
  write_text((out / "stats.json").string(), stats_json.dump(2) + "\n");
}

RetrainResult load_retrain_result(const std::string& artifact_dir) {
  const fs::path dir(artifact_dir);
  json sidecar;
  try {
    sidecar = json::parse(read_text((dir / "sidecar.json").string()));
  } catch (const json::exception& e) {
    throw DataError("bad sidecar in '" + artifact_dir + "': " + e.what());
  }
  RetrainResult r;
  try {
    r.layer = sidecar.at("layer").get<int>();
    r.spec.target_layer = r.layer;
    r.spec.rate = sidecar.at("rate").get<double>();
    r.spec.input_shape = sidecar.at("input_shape").get<std::vector<int>>();
    r.spec.latent_shape = sidecar.at("latent_shape").get<std::vector<int>>();
    r.spec.clamp_warning = sidecar.at("clamp_warning").get<bool>();
    r.spec.latent_channels = r.spec.latent_shape[0];
    r.ae_history = sidecar.at("ae_loss_history").get<std::vector<double>>();
    r.acc_history = sidecar.at("accuracy_history").get<std::vector<double>>();
    r.val_accuracy = sidecar.at("val_accuracy").get<double>();
    r.test_accuracy = sidecar.at("test_accuracy").get<double>();
  } catch (const json::exception& e) {
    throw DataError("bad sidecar in '" + artifact_dir + "': " + e.what());
  }
  r.head_path = (dir / "head.ispl").string();
  r.tail_path = (dir / "tail.ispl").string();
  return r;
}

F1Report per_class_f1_report(const Model& model, const Model& head, const Model& tail,
                             const Dataset& ds, const std::vector<int>& indices) {
  if (indices.empty()) throw DataError("per-class F1 over an empty index set");
  const int c = ds.class_count;
  auto f1_of = [&](const std::function<int(int)>& predict) {
    std::vector<long long> tp(c, 0), fp(c, 0), fn(c, 0);
    for (int i : indices) {
      const int truth = ds.labels[i];
      const int pred = predict(i);
      if (pred == truth) {
        tp[truth]++;
      } else {
        fp[pred]++;
        fn[truth]++;
      }
    }
    std::vector<std::optional<double>> f1(c);
    for (int k = 0; k < c; ++k) {
      if (tp[k] + fn[k] == 0) continue;  // class absent from the test set
      const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
      f1[k] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[k]) / denom;
    }
    return f1;
  };

  const auto before = f1_of([&](int i) { return predict_class(model, ds.images[i]); });
  const auto after = f1_of([&](int i) {
    const TensorF logits = composed_forward(head, tail, ds.images[i]);
    int best = 0;
    for (std::size_t k = 1; k < logits.data.size(); ++k)
      if (logits.data[k] > logits.data[best]) best = static_cast<int>(k);
    return best;
  });

  F1Report report;
  for (int k = 0; k < c; ++k) {
    F1Row row;
    row.class_id = k;
    row.f1_before = before[k];
    row.f1_after = after[k];
    if (!before[k].has_value()) report.undefined_classes++;
    report.rows.push_back(row);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const F1Row& a, const F1Row& b) {
    const double av = a.f1_before.value_or(-1), bv = b.f1_before.value_or(-1);
    if (av != bv) return av > bv;
    return a.class_id < b.class_id;
  });
  std::vector<double> xs, ys;
  for (const auto& row : report.rows) {
    if (row.f1_before.has_value() && row.f1_after.has_value()) {
      xs.push_back(*row.f1_before);
      ys.push_back(*row.f1_after);
    }
  }
  report.rank_rho = xs.size() >= 2 ? spearman_rho(xs, ys) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

void write_f1_csv(const std::string& path, const F1Report& report) {
  std::vector<CsvRow> rows;
  for (const auto& r : report.rows)
    rows.push_back({std::to_string(r.class_id),
                    r.f1_before.has_value() ? fmt_double(*r.f1_before) : "",
                    r.f1_after.has_value() ? fmt_double(*r.f1_after) : ""});
  write_csv(path, {"class", "f1_before", "f1_after"}, rows);
}

std::string run_pipeline(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  save_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());

  auto guard = [](const char* stage, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  };

  const Dataset ds = guard("data", [&] { return stage_data(cfg); });
  const Model model = guard("train", [&] { return stage_train(cfg, ds); });
  const CuiStageResult cui = guard("cui", [&] { return stage_cui(cfg, ds, model); });
  const std::vector<int> layers = guard("retrain", [&] { return choose_candidates(cfg, model, cui); });
  const std::vector<RetrainResult> results =
      guard("retrain", [&] { return stage_retrain(cfg, ds, model, layers); });
  guard("sweep", [&] {
    stage_sweep(cfg, model, cui, results);
    return 0;
  });
  guard("stats", [&] {
    stage_stats(cfg, ds, model, cui.curve, results);
    return 0;
  });
  return cfg.output_dir;
}

}  // namespace isplit
