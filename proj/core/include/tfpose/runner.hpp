#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tfpose/config.hpp"
#include "tfpose/data.hpp"
#include "tfpose/losses.hpp"
#include "tfpose/metrics.hpp"
#include "tfpose/transformer.hpp"

namespace tfpose {

/// Model plus registry plus optional auxiliary head, built from one config.
/// The aux head only exists when the loss uses it (lambda > 0).
struct ModelBundle {
  Config cfg;
  ParamRegistry<float> params;
  std::unique_ptr<TFPoseModel<float>> model;
  std::unique_ptr<AuxHead<float>> aux;
};

ModelBundle build_model(const Config& cfg, std::uint64_t init_seed);

/// Rebuilds the model recorded in a checkpoint and loads its parameters.
struct LoadedModel {
  ModelBundle bundle;
  std::int64_t step = 0;
  bool has_optimizer = false;
};
LoadedModel load_model(const std::string& checkpoint_path);

SkeletonSpec resolve_skeleton(const DataConfig& data);
std::vector<PoseInstance> build_dataset(const Config& cfg);

struct TrainResult {
  std::int64_t steps_run = 0;
  bool aborted_non_finite = false;
  double final_l_reg = 0;
  double final_total = 0;
  std::string log_path;
  std::string checkpoint_path;
};

/// Full training loop: deterministic batch sampling, optional augmentation,
/// per-instance forward/backward (parallel over the batch with gradient
/// buffers merged in instance order), AdamW updates, CSV loss log and
/// periodic checkpoints. A non-finite loss or gradient aborts the run with
/// the last good checkpoint retained on disk.
TrainResult train_run(const Config& cfg, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_override = {});

struct LossLogRow {
  std::int64_t step;
  double lr, l_reg, l_aux, total;
};
std::vector<LossLogRow> read_loss_log(const std::string& path);

struct EvalOptions {
  double pck_fraction = 0.05;
  OksConfig oks;
  int threads = 0;
};

struct EvalOutcome {
  EvalReport report;
  std::vector<double> per_layer_l1;  // mean |pred - gt| per decoder layer
  int instances_skipped = 0;         // instances with no labeled keypoint
};

EvalOutcome evaluate(const TFPoseModel<float>& model, const std::vector<PoseInstance>& instances,
                     const EvalOptions& opts);

/// Builds the OksConfig for a dataset per the data section (file, or uniform
/// fallback sized to the skeleton).
OksConfig resolve_oks(const DataConfig& data, int keypoints);

/// Emits per-decoder-layer q2q matrices averaged over the instances as CSV,
/// one sampling-trace JSON per instance, and optional rendered overlays.
void dump_attn(const ModelBundle& bundle, const std::vector<PoseInstance>& instances,
               const std::string& out_dir, bool render);

ImageCrop read_image_json(const std::string& path);
std::string infer_to_json(const TFPoseModel<float>& model, const ImageCrop& image);

}  // namespace tfpose
