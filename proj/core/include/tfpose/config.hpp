#pragma once

#include <cstdint>
#include <string>

#include "tfpose/losses.hpp"
#include "tfpose/model_config.hpp"
#include "tfpose/optim.hpp"

namespace tfpose {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "coco" | "cache"
  int count = 8;                     // synthetic instance count
  std::uint64_t seed = 7;            // synthetic generation seed
  std::string skeleton = "coco17";   // builtin name or JSON path
  std::string coco_json;
  std::string image_root;
  std::string cache;  // dataset cache path for source == "cache"
  bool augment_enabled = false;
  double rotation_deg = 40.0;
  double scale_min = 0.5;
  double scale_max = 1.5;
  bool hflip = true;
  double pck_fraction = 0.05;
  std::string oks_k_file;    // JSON array of per-keypoint falloff constants
  double oks_k_default = 0.1;  // uniform fallback when no file is given
};

/// Loop-level settings living in the "optim" section next to OptimConfig.
struct RunConfig {
  int batch_size = 8;
  std::int64_t checkpoint_every = 500;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  std::string resume_from;
  double early_stop_l_reg = 0.0;  // 0 disables early stopping
};

/// One JSON document with sections model / loss / optim / data.
/// Missing keys take defaults; unknown keys or sections are rejected.
struct Config {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  RunConfig run;
  DataConfig data;

  static Config from_json_text(const std::string& text);
  static Config from_file(const std::string& path);
  std::string to_json() const;

  void validate() const;
};

}  // namespace tfpose
