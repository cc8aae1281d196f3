#include "tfpose/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tfpose {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename V>
void get_to(const json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

Config Config::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  check_keys(j, "", {"model", "loss", "optim", "data"});

  Config cfg;
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model",
               {"keypoints", "input_h", "input_w", "enc_layers", "dec_layers", "channels", "heads",
                "points", "include_c2", "ffn_width", "q2q", "dropout", "backbone_widths",
                "aux_channels"});
    get_to(m, "keypoints", cfg.model.keypoints);
    get_to(m, "input_h", cfg.model.input_h);
    get_to(m, "input_w", cfg.model.input_w);
    get_to(m, "enc_layers", cfg.model.enc_layers);
    get_to(m, "dec_layers", cfg.model.dec_layers);
    get_to(m, "channels", cfg.model.channels);
    get_to(m, "heads", cfg.model.heads);
    get_to(m, "points", cfg.model.points);
    get_to(m, "include_c2", cfg.model.include_c2);
    get_to(m, "ffn_width", cfg.model.ffn_width);
    get_to(m, "q2q", cfg.model.q2q);
    get_to(m, "dropout", cfg.model.dropout);
    get_to(m, "aux_channels", cfg.model.aux_channels);
    if (m.contains("backbone_widths")) {
      auto widths = m["backbone_widths"].get<std::vector<int>>();
      if (widths.size() != 4) throw std::invalid_argument("config: model.backbone_widths needs 4 entries");
      std::copy(widths.begin(), widths.end(), cfg.model.backbone_widths.begin());
    }
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    check_keys(l, "loss", {"lambda_aux", "sigma", "visibility_masking"});
    get_to(l, "lambda_aux", cfg.loss.lambda_aux);
    get_to(l, "sigma", cfg.loss.sigma);
    get_to(l, "visibility_masking", cfg.loss.visibility_masking);
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    check_keys(o, "optim",
               {"base_lr", "beta1", "beta2", "eps", "weight_decay", "transformer_lr_factor",
                "total_steps", "warmup_steps", "batch_size", "checkpoint_every", "seed", "threads",
                "resume_from", "early_stop_l_reg"});
    get_to(o, "base_lr", cfg.optim.base_lr);
    get_to(o, "beta1", cfg.optim.beta1);
    get_to(o, "beta2", cfg.optim.beta2);
    get_to(o, "eps", cfg.optim.eps);
    get_to(o, "weight_decay", cfg.optim.weight_decay);
    get_to(o, "transformer_lr_factor", cfg.optim.transformer_lr_factor);
    get_to(o, "total_steps", cfg.optim.total_steps);
    get_to(o, "warmup_steps", cfg.optim.warmup_steps);
    get_to(o, "batch_size", cfg.run.batch_size);
    get_to(o, "checkpoint_every", cfg.run.checkpoint_every);
    get_to(o, "seed", cfg.run.seed);
    get_to(o, "threads", cfg.run.threads);
    get_to(o, "resume_from", cfg.run.resume_from);
    get_to(o, "early_stop_l_reg", cfg.run.early_stop_l_reg);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data",
               {"source", "count", "seed", "skeleton", "coco_json", "image_root", "cache",
                "augment_enabled", "rotation_deg", "scale_min", "scale_max", "hflip",
                "pck_fraction", "oks_k_file", "oks_k_default"});
    get_to(d, "source", cfg.data.source);
    get_to(d, "count", cfg.data.count);
    get_to(d, "seed", cfg.data.seed);
    get_to(d, "skeleton", cfg.data.skeleton);
    get_to(d, "coco_json", cfg.data.coco_json);
    get_to(d, "image_root", cfg.data.image_root);
    get_to(d, "cache", cfg.data.cache);
    get_to(d, "augment_enabled", cfg.data.augment_enabled);
    get_to(d, "rotation_deg", cfg.data.rotation_deg);
    get_to(d, "scale_min", cfg.data.scale_min);
    get_to(d, "scale_max", cfg.data.scale_max);
    get_to(d, "hflip", cfg.data.hflip);
    get_to(d, "pck_fraction", cfg.data.pck_fraction);
    get_to(d, "oks_k_file", cfg.data.oks_k_file);
    get_to(d, "oks_k_default", cfg.data.oks_k_default);
  }
  cfg.validate();
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string Config::to_json() const {
  json j;
  j["model"] = {{"keypoints", model.keypoints},
                {"input_h", model.input_h},
                {"input_w", model.input_w},
                {"enc_layers", model.enc_layers},
                {"dec_layers", model.dec_layers},
                {"channels", model.channels},
                {"heads", model.heads},
                {"points", model.points},
                {"include_c2", model.include_c2},
                {"ffn_width", model.ffn_width},
                {"q2q", model.q2q},
                {"dropout", model.dropout},
                {"backbone_widths", model.backbone_widths},
                {"aux_channels", model.aux_channels}};
  j["loss"] = {{"lambda_aux", loss.lambda_aux},
               {"sigma", loss.sigma},
               {"visibility_masking", loss.visibility_masking}};
  j["optim"] = {{"base_lr", optim.base_lr},
                {"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"eps", optim.eps},
                {"weight_decay", optim.weight_decay},
                {"transformer_lr_factor", optim.transformer_lr_factor},
                {"total_steps", optim.total_steps},
                {"warmup_steps", optim.warmup_steps},
                {"batch_size", run.batch_size},
                {"checkpoint_every", run.checkpoint_every},
                {"seed", run.seed},
                {"threads", run.threads},
                {"resume_from", run.resume_from},
                {"early_stop_l_reg", run.early_stop_l_reg}};
  j["data"] = {{"source", data.source},
               {"count", data.count},
               {"seed", data.seed},
               {"skeleton", data.skeleton},
               {"coco_json", data.coco_json},
               {"image_root", data.image_root},
               {"cache", data.cache},
               {"augment_enabled", data.augment_enabled},
               {"rotation_deg", data.rotation_deg},
               {"scale_min", data.scale_min},
               {"scale_max", data.scale_max},
               {"hflip", data.hflip},
               {"pck_fraction", data.pck_fraction},
               {"oks_k_file", data.oks_k_file},
               {"oks_k_default", data.oks_k_default}};
  return j.dump(2);
}

void Config::validate() const {
  model.validate();
  optim.validate();
  if (loss.lambda_aux < 0) throw std::invalid_argument("config: loss.lambda_aux must be >= 0");
  if (loss.sigma <= 0) throw std::invalid_argument("config: loss.sigma must be positive");
  if (run.batch_size < 1) throw std::invalid_argument("config: optim.batch_size must be >= 1");
  if (run.checkpoint_every < 1) throw std::invalid_argument("config: optim.checkpoint_every must be >= 1");
  if (data.source != "synthetic" && data.source != "coco" && data.source != "cache") {
    throw std::invalid_argument("config: data.source must be synthetic, coco or cache");
  }
  if (data.source == "synthetic" && data.count < 1) {
    throw std::invalid_argument("config: data.count must be >= 1");
  }
  if (data.augment_enabled) {
    if (data.rotation_deg < 0 || data.rotation_deg > 40.0) {
      throw std::invalid_argument("config: data.rotation_deg must be in [0, 40]");
    }
    if (data.scale_min < 0.5 || data.scale_max > 1.5 || data.scale_min > data.scale_max) {
      throw std::invalid_argument("config: data scale range must lie inside [0.5, 1.5]");
    }
  }
  if (data.pck_fraction <= 0) throw std::invalid_argument("config: data.pck_fraction must be positive");
  if (data.oks_k_default <= 0) throw std::invalid_argument("config: data.oks_k_default must be positive");
}

}  // namespace tfpose
