#pragma once

#include <optional>
#include <string>
#include <vector>

#include "isplit/bottleneck.hpp"
#include "isplit/channel.hpp"
#include "isplit/csvio.hpp"
#include "isplit/dataset.hpp"
#include "isplit/gradcam.hpp"
#include "isplit/model.hpp"
#include "isplit/train.hpp"

namespace isplit {

/// Everything one experiment needs: dataset source, architecture, CUI
/// options, candidate selection, bottleneck rate, per-phase training
/// configs, channel model, output directory.
struct ExperimentConfig {
  // dataset
  std::string dataset_source = "synth";  // synth | idx
  std::string idx_images;
  std::string idx_labels;
  int synth_classes = 8;
  int synth_per_class = 100;
  int synth_image_size = 32;
  std::string synth_profile = "mixed";
  std::uint64_t data_seed = 7;
  double train_frac = 0.6;
  double val_frac = 0.2;

  // model + base training
  std::string architecture = "vgg-micro";
  std::uint64_t seed = 1;
  TrainConfig base_train;

  // interpretability
  std::string cui_reduction = "sum";
  std::vector<int> class_subset;
  bool class_balanced = false;
  int threads = 0;

  // candidate split points
  std::string candidates_mode = "auto-cui";  // auto-cui | auto-cde | explicit
  std::vector<int> candidate_layers;
  int max_candidates = 5;

  // bottleneck + retraining
  double compression_rate = 0.9;
  TrainConfig ae_train;
  TrainConfig finetune_train;

  // channel simulator
  double channel_bandwidth_bytes_per_s = 10'000'000;
  double channel_latency_s = 0.020;

  // resampling statistics
  int stats_trials = 15;
  int stats_sample_size = 800;
  std::uint64_t stats_seed = 99;

  std::string output_dir = "out";
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

Dataset stage_data(const ExperimentConfig& cfg);

/// Trains the base classifier on the train split; writes model.ispl and
/// train_history.csv into the output directory.
Model stage_train(const ExperimentConfig& cfg, const Dataset& ds);

struct CuiStageResult {
  CuiCurve curve;
  CuiCurve gradients_curve;
  std::vector<int> cui_candidates;  // ranked
  std::vector<int> cde_candidates;
};

/// CUI + Gradients curves on the validation split; writes cui.csv,
/// gradients_baseline.csv and cui.svg.
CuiStageResult stage_cui(const ExperimentConfig& cfg, const Dataset& ds, const Model& model);

/// Layers with spatial extents >= 4 (two stride-2 halvings must fit).
std::vector<int> bottleneck_feasible_layers(const Model& model);

/// Candidate list per cfg.candidates_mode, filtered to feasible layers and
/// capped at max_candidates.
std::vector<int> choose_candidates(const ExperimentConfig& cfg, const Model& model,
                                   const CuiStageResult& cui);

struct RetrainResult {
  int layer = -1;
  BottleneckSpec spec;
  std::vector<double> ae_history;
  std::vector<double> acc_history;
  double val_accuracy = 0;
  double test_accuracy = 0;
  std::string head_path;
  std::string tail_path;
};

/// Builds, trains (ae then finetune) and persists one bottleneck split.
RetrainResult retrain_split(const ExperimentConfig& cfg, const Dataset& ds, const Model& model,
                            int layer, const std::string& artifact_dir);

/// All candidates, fanned out over worker threads (results are ordered and
/// seed-deterministic regardless of the thread count).
std::vector<RetrainResult> stage_retrain(const ExperimentConfig& cfg, const Dataset& ds,
                                         const Model& model, const std::vector<int>& layers);

std::vector<SweepRow> sweep_report(const Model& model, const std::vector<RetrainResult>& results,
                                   const ChannelModel& channel);

/// sweep.csv + sweep.svg (CUI curve with candidate markers over the
/// retrained-accuracy curve) + summary.json.
void stage_sweep(const ExperimentConfig& cfg, const Model& model, const CuiStageResult& cui,
                 const std::vector<RetrainResult>& results);

struct ResampleStats {
  double mean = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  std::vector<double> per_trial;
};

/// Accuracy distribution over `trials` random subsets (without replacement)
/// of the given index set.
ResampleStats stats_resample(const Model& model, const Dataset& ds, const std::vector<int>& indices,
                             int sample_size, int trials, std::uint64_t seed);
ResampleStats stats_resample(const Model& head, const Model& tail, const Dataset& ds,
                             const std::vector<int>& indices, int sample_size, int trials,
                             std::uint64_t seed);

/// Resampling statistics for the unsplit model and the highest-CUI retrained
/// split, plus the per-class F1 comparison on the test split. Writes
/// stats.csv, stats.json and f1.csv.
void stage_stats(const ExperimentConfig& cfg, const Dataset& ds, const Model& model,
                 const CuiCurve& curve, const std::vector<RetrainResult>& results);

/// Rebuilds a RetrainResult from a split_L*/ artifact directory.
RetrainResult load_retrain_result(const std::string& artifact_dir);

struct F1Row {
  int class_id = -1;
  std::optional<double> f1_before;
  std::optional<double> f1_after;
};

struct F1Report {
  std::vector<F1Row> rows;  // ranked by descending pre-split F1
  double rank_rho = 0;      // over classes defined in both columns
  int undefined_classes = 0;
};

F1Report per_class_f1_report(const Model& model, const Model& head, const Model& tail,
                             const Dataset& ds, const std::vector<int>& indices);
void write_f1_csv(const std::string& path, const F1Report& report);

/// Runs every stage in order; a failure raises StageError naming the stage,
/// leaving completed artifacts in place. Returns the output directory.
std::string run_pipeline(const ExperimentConfig& cfg);

}  // namespace isplit
