#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "isplit/bottleneck.hpp"
#include "isplit/net.hpp"
#include "isplit/pipeline.hpp"
#include "isplit/svg.hpp"

namespace fs = std::filesystem;
using namespace isplit;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

ExperimentConfig load_cfg(const std::string& path, const std::string& out_override) {
  ExperimentConfig cfg = path.empty() ? default_config() : load_config(path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  return cfg;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

CuiStageResult load_cui_artifacts(const ExperimentConfig& cfg, const Model& model) {
  CuiStageResult r;
  r.curve = read_cui_csv((fs::path(cfg.output_dir) / "cui.csv").string());
  r.gradients_curve =
      read_cui_csv((fs::path(cfg.output_dir) / "gradients_baseline.csv").string());
  r.cui_candidates = select_split_points(r.curve);
  r.cde_candidates = cde_candidate_layers(model);
  return r;
}

std::vector<RetrainResult> load_retrain_artifacts(const ExperimentConfig& cfg) {
  std::vector<RetrainResult> results;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("split_L", 0) == 0)
      dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) results.push_back(load_retrain_result(d.string()));
  if (results.empty())
    throw DataError("no split_L*/ artifacts under '" + cfg.output_dir + "'; run retrain first");
  return results;
}

int run_command(CLI::App& app, int argc, char** argv) {
  bool print_default = false;
  app.add_flag("--print-default-config", print_default, "Print the default config JSON and exit");

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline: train, cui, retrain, sweep, stats");
  std::string run_config, run_out;
  run->add_option("--config", run_config, "Experiment config JSON");
  run->add_option("--out", run_out, "Override output directory");

  // train
  auto* train = app.add_subcommand("train", "Train the base classifier");
  std::string train_config, train_out;
  train->add_option("--config", train_config, "Experiment config JSON");
  train->add_option("--out", train_out, "Override output directory");

  // cui
  auto* cui = app.add_subcommand("cui", "Compute CUI and Gradients-baseline curves");
  std::string cui_config, cui_out, cui_subset, cui_reduction;
  bool cui_balanced = false;
  cui->add_option("--config", cui_config, "Experiment config JSON");
  cui->add_option("--out", cui_out, "Override output directory");
  cui->add_option("--class-subset", cui_subset, "Comma-separated class ids (per-class curves)");
  cui->add_option("--reduction", cui_reduction, "sum | mean");
  cui->add_flag("--class-balanced", cui_balanced, "Weight classes equally");

  // split
  auto* split_cmd = app.add_subcommand("split", "Plain head/tail split (no bottleneck)");
  std::string split_model, split_head = "head.ispl", split_tail = "tail.ispl";
  int split_layer = -1;
  split_cmd->add_option("--model", split_model, "Model checkpoint")->required();
  split_cmd->add_option("--layer", split_layer, "Split after this layer index")->required();
  split_cmd->add_option("--head", split_head, "Head checkpoint output path");
  split_cmd->add_option("--tail", split_tail, "Tail checkpoint output path");

  // retrain
  auto* retrain = app.add_subcommand("retrain", "Bottleneck-train one or more split candidates");
  std::string rt_config, rt_out, rt_layers;
  retrain->add_option("--config", rt_config, "Experiment config JSON");
  retrain->add_option("--out", rt_out, "Override output directory");
  retrain->add_option("--layers", rt_layers, "Comma-separated layer indices (default: config)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Build the sweep table from retrained artifacts");
  std::string sweep_config, sweep_out;
  sweep->add_option("--config", sweep_config, "Experiment config JSON");
  sweep->add_option("--out", sweep_out, "Override output directory");

  // stats
  auto* stats = app.add_subcommand("stats", "Resampling statistics and per-class F1");
  std::string stats_config, stats_out;
  stats->add_option("--config", stats_config, "Experiment config JSON");
  stats->add_option("--out", stats_out, "Override output directory");

  // plot
  auto* plot = app.add_subcommand("plot", "Re-emit SVG plots from CSV artifacts");
  std::string plot_cui, plot_sweep, plot_out = "plot.svg";
  plot->add_option("--cui", plot_cui, "CUI curve CSV");
  plot->add_option("--sweep", plot_sweep, "Sweep CSV (adds the accuracy series)");
  plot->add_option("--out", plot_out, "SVG output path");

  // serve
  auto* serve = app.add_subcommand("serve", "Host decoder+tail inference");
  std::string serve_bind = "127.0.0.1:9000", serve_tail;
  int serve_max_conn = 8;
  serve->add_option("--bind", serve_bind, "host:port to bind");
  serve->add_option("--tail", serve_tail, "Tail checkpoint")->required();
  serve->add_option("--max-conn", serve_max_conn, "Concurrent connection cap");

  // infer
  auto* infer = app.add_subcommand("infer", "Run head locally, tail remotely");
  std::string infer_head, infer_server = "127.0.0.1:9000", infer_image;
  int infer_index = 0, infer_timeout = 5000;
  infer->add_option("--head", infer_head, "Head checkpoint")->required();
  infer->add_option("--server", infer_server, "host:port of the tail server");
  infer->add_option("--image", infer_image, "IDX images file")->required();
  infer->add_option("--index", infer_index, "Image index within the IDX file");
  infer->add_option("--timeout-ms", infer_timeout, "Network timeout");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as an IDX pair");
  int sy_classes = 8, sy_per_class = 100, sy_size = 32;
  std::string sy_profile = "mixed", sy_images = "synth-images.idx", sy_labels = "synth-labels.idx";
  std::uint64_t sy_seed = 7;
  synth->add_option("--classes", sy_classes, "Class count");
  synth->add_option("--per-class", sy_per_class, "Images per class");
  synth->add_option("--size", sy_size, "Image side length");
  synth->add_option("--profile", sy_profile, "fine | coarse | mixed");
  synth->add_option("--seed", sy_seed, "Generator seed");
  synth->add_option("--images", sy_images, "IDX images output");
  synth->add_option("--labels", sy_labels, "IDX labels output");

  app.require_subcommand(0, 1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }

  if (print_default) {
    std::cout << config_to_json(default_config());
    return 0;
  }

  if (run->parsed()) {
    const ExperimentConfig cfg = load_cfg(run_config, run_out);
    const std::string out = run_pipeline(cfg);
    std::cout << "pipeline artifacts in " << out << "\n";
    return 0;
  }

  if (train->parsed()) {
    const ExperimentConfig cfg = load_cfg(train_config, train_out);
    const Dataset ds = stage_data(cfg);
    const Model model = stage_train(cfg, ds);
    std::cout << "trained " << cfg.architecture << " on " << ds.id << "; val accuracy "
              << accuracy(model, ds.images, ds.labels,
                          ds.indices(SplitTag::val).empty() ? ds.all_indices()
                                                            : ds.indices(SplitTag::val))
              << "\n";
    return 0;
  }

  if (cui->parsed()) {
    ExperimentConfig cfg = load_cfg(cui_config, cui_out);
    if (!cui_subset.empty()) cfg.class_subset = parse_int_list(cui_subset);
    if (!cui_reduction.empty()) cfg.cui_reduction = cui_reduction;
    if (cui_balanced) cfg.class_balanced = true;
    const Dataset ds = stage_data(cfg);
    const Model model = checkpoint_load((fs::path(cfg.output_dir) / "model.ispl").string());
    const CuiStageResult r = stage_cui(cfg, ds, model);
    std::cout << "cui curve over " << r.curve.image_count << " images; candidates:";
    for (int l : r.cui_candidates) std::cout << " " << l;
    std::cout << "\n";
    return 0;
  }

  if (split_cmd->parsed()) {
    const Model model = checkpoint_load(split_model);
    const SplitPlan plan = split(model, split_layer);
    checkpoint_save(plan.head, split_head);
    checkpoint_save(plan.tail, split_tail);
    std::cout << "head: " << split_head << " (" << plan.head.layers.size() << " layers), tail: "
              << split_tail << " (" << plan.tail.layers.size() << " layers)\n";
    return 0;
  }

  if (retrain->parsed()) {
    ExperimentConfig cfg = load_cfg(rt_config, rt_out);
    if (!rt_layers.empty()) {
      cfg.candidates_mode = "explicit";
      cfg.candidate_layers = parse_int_list(rt_layers);
    }
    const Dataset ds = stage_data(cfg);
    const Model model = checkpoint_load((fs::path(cfg.output_dir) / "model.ispl").string());
    std::vector<int> layers;
    if (cfg.candidates_mode == "explicit") {
      CuiStageResult dummy;
      layers = choose_candidates(cfg, model, dummy);
    } else {
      layers = choose_candidates(cfg, model, load_cui_artifacts(cfg, model));
    }
    const auto results = stage_retrain(cfg, ds, model, layers);
    for (const auto& r : results)
      std::cout << "layer " << r.layer << ": val accuracy " << r.val_accuracy << ", encoded "
                << r.spec.encoded_elements() * 4 << " bytes\n";
    return 0;
  }

  if (sweep->parsed()) {
    const ExperimentConfig cfg = load_cfg(sweep_config, sweep_out);
    const Model model = checkpoint_load((fs::path(cfg.output_dir) / "model.ispl").string());
    const CuiStageResult r = load_cui_artifacts(cfg, model);
    stage_sweep(cfg, model, r, load_retrain_artifacts(cfg));
    std::cout << "sweep table in " << (fs::path(cfg.output_dir) / "sweep.csv").string() << "\n";
    return 0;
  }

  if (stats->parsed()) {
    const ExperimentConfig cfg = load_cfg(stats_config, stats_out);
    const Dataset ds = stage_data(cfg);
    const Model model = checkpoint_load((fs::path(cfg.output_dir) / "model.ispl").string());
    const CuiStageResult r = load_cui_artifacts(cfg, model);
    stage_stats(cfg, ds, model, r.curve, load_retrain_artifacts(cfg));
    std::cout << "statistics in " << (fs::path(cfg.output_dir) / "stats.json").string() << "\n";
    return 0;
  }

  if (plot->parsed()) {
    if (plot_cui.empty()) throw ConfigError("plot needs --cui");
    const CuiCurve curve = read_cui_csv(plot_cui);
    std::vector<PlotSeries> series;
    series.push_back({"CUI", curve.values, "#e0a800", false, {}});
    std::vector<std::string> labels = curve.layer_names;
    if (!plot_sweep.empty()) {
      const auto rows = read_sweep_csv(plot_sweep);
      std::vector<double> cui_at, acc_at;
      labels.clear();
      for (const auto& row : rows) {
        cui_at.push_back(curve.value_at(row.layer));
        acc_at.push_back(row.accuracy);
        labels.push_back(row.layer_name);
      }
      series.clear();
      series.push_back({"CUI", cui_at, "#e0a800", false, {}});
      series.push_back({"post-split accuracy", acc_at, "#7030a0", true, {}});
    }
    write_plot_svg(plot_out, "layer importance", labels, series);
    std::cout << "wrote " << plot_out << "\n";
    return 0;
  }

  if (serve->parsed()) {
    const Endpoint ep = parse_endpoint(serve_bind);
    const Model tail = checkpoint_load(serve_tail);
    TailServer server(ep.host, ep.port, tail, serve_max_conn);
    server.start();
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "serving tail on " << ep.host << ":" << server.port() << " (max "
              << serve_max_conn << " connections)\n";
    while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    std::cout << "served " << server.requests_served() << " requests, "
              << server.error_frames_sent() << " error frames\n";
    return 0;
  }

  if (infer->parsed()) {
    const Endpoint ep = parse_endpoint(infer_server);
    const Model head = checkpoint_load(infer_head);
    const std::vector<TensorF> images = load_idx_images(infer_image);
    if (infer_index < 0 || infer_index >= static_cast<int>(images.size()))
      throw DataError("image index " + std::to_string(infer_index) + " out of range [0," +
                      std::to_string(images.size()) + ")");
    const InferResult r =
        head_infer(images[infer_index], head, ep.host, ep.port, infer_timeout);
    int best = 0;
    for (std::size_t k = 1; k < r.logits.data.size(); ++k)
      if (r.logits.data[k] > r.logits.data[best]) best = static_cast<int>(k);
    std::cout << "predicted class " << best << "\nlogits:";
    for (float v : r.logits.data) std::cout << " " << v;
    std::cout << "\ntiming_ms head=" << r.timing.head_ms << " transfer=" << r.timing.transfer_ms
              << " tail=" << r.timing.tail_ms << "\n";
    return 0;
  }

  if (synth->parsed()) {
    const Dataset ds = synth_dataset(sy_classes, sy_per_class, sy_size, sy_profile, sy_seed);
    save_idx(ds, sy_images, sy_labels);
    std::cout << "wrote " << ds.size() << " images to " << sy_images << " / " << sy_labels << "\n";
    return 0;
  }

  std::cout << app.help();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"I-Split: interpretability-driven split computing toolkit"};
  try {
    return run_command(app, argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config_error);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data_error);
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data_error);
  } catch (const NetworkError& e) {
    std::cerr << "network error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::network_failure);
  } catch (const StageError& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(ExitCode::stage_failure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::stage_failure);
  }
}
