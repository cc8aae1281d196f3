#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tfpose/runner.hpp"

namespace {

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
  const auto cfg = tfpose::Config::from_file(config_path);
  const auto result = tfpose::train_run(cfg, out_dir, seed);
  if (result.aborted_non_finite) {
    std::cerr << "training aborted: non-finite loss or gradient after " << result.steps_run
              << " steps; last good checkpoint retained\n";
    return 2;
  }
  std::cout << "trained " << result.steps_run << " steps, final l_reg " << result.final_l_reg
            << ", total " << result.final_total << "\n"
            << "loss log:   " << result.log_path << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

std::vector<tfpose::PoseInstance> dataset_for(const tfpose::Config& cfg, const std::string& data_arg) {
  tfpose::Config adjusted = cfg;
  if (data_arg == "synthetic" || data_arg.empty()) {
    adjusted.data.source = "synthetic";
  } else if (data_arg.size() > 5 && data_arg.substr(data_arg.size() - 5) == ".tfpz") {
    adjusted.data.source = "cache";
    adjusted.data.cache = data_arg;
  } else {
    adjusted.data.source = "coco";
    adjusted.data.coco_json = data_arg;
  }
  return tfpose::build_dataset(adjusted);
}

int cmd_eval(const std::string& checkpoint, const std::string& data_arg, const std::string& report_path) {
  auto loaded = tfpose::load_model(checkpoint);
  const auto instances = dataset_for(loaded.bundle.cfg, data_arg);
  tfpose::EvalOptions opts;
  opts.pck_fraction = loaded.bundle.cfg.data.pck_fraction;
  opts.oks = tfpose::resolve_oks(loaded.bundle.cfg.data, loaded.bundle.cfg.model.keypoints);
  const auto outcome = tfpose::evaluate(*loaded.bundle.model, instances, opts);

  std::ofstream out(report_path);
  if (!out) {
    std::cerr << "cannot write report: " << report_path << "\n";
    return 1;
  }
  out << outcome.report.to_json() << "\n";
  std::cout << "evaluated " << instances.size() << " instances (" << outcome.instances_skipped
            << " skipped)\n"
            << "mean OKS " << outcome.report.mean_oks << ", AP " << outcome.report.ap << ", PCK "
            << outcome.report.pck << "\n";
  std::cout << "per-layer mean L1:";
  for (double v : outcome.per_layer_l1) std::cout << " " << v;
  std::cout << "\nreport: " << report_path << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& out_path) {
  auto loaded = tfpose::load_model(checkpoint);
  const auto image = tfpose::read_image_json(input);
  const auto text = tfpose::infer_to_json(*loaded.bundle.model, image);
  std::ofstream out(out_path);
  if (!out) {
    std::cerr << "cannot write output: " << out_path << "\n";
    return 1;
  }
  out << text << "\n";
  std::cout << "predictions: " << out_path << "\n";
  return 0;
}

int cmd_dump_attn(const std::string& checkpoint, const std::string& data_arg,
                  const std::string& out_dir, bool render) {
  auto loaded = tfpose::load_model(checkpoint);
  const auto instances = dataset_for(loaded.bundle.cfg, data_arg);
  tfpose::dump_attn(loaded.bundle, instances, out_dir, render);
  std::cout << "attention dumps in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TFPose: regression-based 2D pose estimation with a deformable-attention transformer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, data_arg = "synthetic", report_path, input, out_path;
  std::optional<std::uint64_t> seed;
  bool render = false;

  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Config JSON file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", seed, "Override optim.seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_arg, "'synthetic', a COCO JSON, or a .tfpz dataset cache");
  eval->add_option("--report", report_path, "Report JSON output path")->required();

  auto* infer = app.add_subcommand("infer", "Predict keypoints for one image");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--input", input, "Image JSON {height,width,pixels}")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out_path, "Prediction JSON output path")->required();

  auto* dump = app.add_subcommand("dump-attn", "Dump q2q matrices and sampling traces");
  dump->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  dump->add_option("--data", data_arg, "'synthetic', a COCO JSON, or a .tfpz dataset cache");
  dump->add_option("--out", out_dir, "Output directory")->required();
  dump->add_flag("--render", render, "Also write PNG overlays of the sampling points");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, seed);
    if (eval->parsed()) return cmd_eval(checkpoint, data_arg, report_path);
    if (infer->parsed()) return cmd_infer(checkpoint, input, out_path);
    if (dump->parsed()) return cmd_dump_attn(checkpoint, data_arg, out_dir, render);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
