#include "tfpose/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "tfpose/checkpoint.hpp"
#include "tfpose/image_io.hpp"
#include "tfpose/render.hpp"
#include "tfpose/rng.hpp"

namespace tfpose {

namespace fs = std::filesystem;
using json = nlohmann::json;

ModelBundle build_model(const Config& cfg, std::uint64_t init_seed) {
  cfg.validate();
  ModelBundle bundle;
  bundle.cfg = cfg;
  std::mt19937_64 rng(init_seed);
  bundle.model = std::make_unique<TFPoseModel<float>>(cfg.model, bundle.params, rng);
  if (cfg.loss.lambda_aux > 0) {
    bundle.aux = std::make_unique<AuxHead<float>>(cfg.model, bundle.params, rng);
  }
  return bundle;
}

LoadedModel load_model(const std::string& checkpoint_path) {
  const CheckpointData data = load_checkpoint(checkpoint_path);
  LoadedModel loaded;
  loaded.bundle = build_model(Config::from_json_text(data.config_json), 0);
  apply_checkpoint_params(data, loaded.bundle.params);
  loaded.step = data.step;
  loaded.has_optimizer = data.has_optimizer;
  return loaded;
}

SkeletonSpec resolve_skeleton(const DataConfig& data) {
  if (data.skeleton == "coco17") return coco17_skeleton();
  return load_skeleton(data.skeleton);
}

std::vector<PoseInstance> build_dataset(const Config& cfg) {
  const auto& d = cfg.data;
  if (d.source == "synthetic") {
    const SkeletonSpec skel = resolve_skeleton(d);
    std::vector<PoseInstance> out;
    out.reserve(static_cast<std::size_t>(d.count));
    for (int i = 0; i < d.count; ++i) {
      out.push_back(synth_pose_sample(mix_seed(d.seed, static_cast<std::uint64_t>(i)), skel,
                                      cfg.model.input_h, cfg.model.input_w));
    }
    return out;
  }
  if (d.source == "coco") {
    if (d.coco_json.empty()) throw std::invalid_argument("data.source=coco requires data.coco_json");
    return load_coco_keypoints(d.coco_json, cfg.model.input_h, cfg.model.input_w, d.image_root)
        .instances;
  }
  if (d.cache.empty()) throw std::invalid_argument("data.source=cache requires data.cache");
  return load_dataset_cache(d.cache);
}

OksConfig resolve_oks(const DataConfig& data, int keypoints) {
  if (!data.oks_k_file.empty()) {
    OksConfig cfg = OksConfig::from_file(data.oks_k_file);
    if (static_cast<int>(cfg.k.size()) != keypoints) {
      throw std::runtime_error("oks constants file holds " + std::to_string(cfg.k.size()) +
                               " entries, dataset has " + std::to_string(keypoints) + " keypoints");
    }
    return cfg;
  }
  return OksConfig::uniform(keypoints, data.oks_k_default);
}

EvalOutcome evaluate(const TFPoseModel<float>& model, const std::vector<PoseInstance>& instances,
                     const EvalOptions& opts) {
  if (instances.empty()) throw std::invalid_argument("evaluate: no instances");
  const int n_dec = model.config().dec_layers;

  struct PerInstance {
    std::vector<KeypointSet> per_layer;  // decoded per decoder layer
  };
  std::vector<PerInstance> outs(instances.size());

  int threads = opts.threads > 0 ? opts.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(instances.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    NoGradGuard no_grad;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= instances.size()) break;
      auto image = image_to_tensor<float>(instances[i].image);
      auto pred = model.forward(image, RunMode::kInfer);
      for (const auto& coords : pred.coords) {
        KeypointSet kp;
        kp.vis.assign(static_cast<std::size_t>(coords->shape[0]), 2);
        kp.xy.assign(coords->value.begin(), coords->value.end());
        outs[i].per_layer.push_back(std::move(kp));
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  EvalOutcome outcome;
  outcome.per_layer_l1.assign(static_cast<std::size_t>(n_dec), 0.0);
  std::vector<double> oks_values;
  std::vector<KeypointSet> final_preds, gts;
  std::vector<std::int64_t> layer_terms(static_cast<std::size_t>(n_dec), 0);

  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& gt = instances[i].keypoints;
    if (gt.labeled_count() == 0) {
      ++outcome.instances_skipped;
      continue;
    }
    const auto& layers = outs[i].per_layer;
    for (int d = 0; d < n_dec; ++d) {
      for (int k = 0; k < gt.k(); ++k) {
        if (!gt.labeled(k)) continue;
        outcome.per_layer_l1[static_cast<std::size_t>(d)] +=
            std::abs(layers[static_cast<std::size_t>(d)].x(k) - gt.x(k)) +
            std::abs(layers[static_cast<std::size_t>(d)].y(k) - gt.y(k));
        layer_terms[static_cast<std::size_t>(d)] += 2;
      }
    }
    final_preds.push_back(layers.back());
    gts.push_back(gt);
    oks_values.push_back(oks(layers.back(), gt, instances[i].area, opts.oks));
  }
  if (oks_values.empty()) throw std::runtime_error("evaluate: every instance lacked labeled keypoints");

  for (int d = 0; d < n_dec; ++d) {
    outcome.per_layer_l1[static_cast<std::size_t>(d)] /= std::max<std::int64_t>(1, layer_terms[static_cast<std::size_t>(d)]);
  }

  double oks_sum = 0;
  for (double v : oks_values) oks_sum += v;
  outcome.report.mean_oks = oks_sum / oks_values.size();
  const ApResult ap = ap_over_oks(oks_values);
  outcome.report.ap = ap.ap;
  outcome.report.ap50 = ap.precision.front();
  outcome.report.ap75 = ap.precision[5];
  // PCK over normalized crop coordinates, unit-square diagonal as the norm
  const PckResult p = pck(final_preds, gts, std::sqrt(2.0), opts.pck_fraction);
  outcome.report.pck = p.mean;
  outcome.report.pck_per_keypoint = p.per_keypoint;
  return outcome;
}

void dump_attn(const ModelBundle& bundle, const std::vector<PoseInstance>& instances,
               const std::string& out_dir, bool render) {
  if (instances.empty()) throw std::invalid_argument("dump_attn: no instances");
  fs::create_directories(out_dir);
  const auto& model = *bundle.model;
  const int n_dec = model.config().dec_layers;
  const int k = model.config().keypoints;

  IntrospectOptions introspect;
  introspect.q2q_matrices = model.config().q2q;
  introspect.sampling_traces = true;

  std::vector<std::vector<double>> q2q_sum(static_cast<std::size_t>(n_dec),
                                           std::vector<double>(static_cast<std::size_t>(k) * k, 0.0));
  NoGradGuard no_grad;
  for (const auto& inst : instances) {
    auto image = image_to_tensor<float>(inst.image);
    auto pred = model.forward(image, RunMode::kInfer, introspect);

    if (introspect.q2q_matrices) {
      for (int d = 0; d < n_dec; ++d) {
        const auto& mat = pred.q2q_attn[static_cast<std::size_t>(d)];
        auto& acc = q2q_sum[static_cast<std::size_t>(d)];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += mat[i] / instances.size();
      }
    }

    json traces = json::array();
    for (int d = 0; d < n_dec; ++d) {
      const SamplingTrace& tr = pred.p2q_traces[static_cast<std::size_t>(d)];
      json layer;
      layer["layer"] = d;
      layer["level_shapes"] = json::array();
      for (auto [h, w] : tr.level_shapes) layer["level_shapes"].push_back({h, w});
      json queries = json::array();
      for (int q = 0; q < tr.queries; ++q) {
        json heads = json::array();
        for (int hd = 0; hd < tr.heads; ++hd) {
          json levels = json::array();
          for (int l = 0; l < tr.levels; ++l) {
            json points = json::array();
            for (int p = 0; p < tr.points; ++p) {
              const auto& e = tr.at(q, hd, l, p);
              points.push_back({{"x", e.x}, {"y", e.y}, {"w", e.weight}});
            }
            levels.push_back({{"level", l}, {"points", points}});
          }
          heads.push_back({{"head", hd}, {"levels", levels}});
        }
        queries.push_back({{"query", q}, {"heads", heads}});
      }
      layer["queries"] = queries;
      traces.push_back(layer);
    }
    json doc;
    doc["instance_id"] = inst.id;
    doc["layers"] = traces;
    std::ofstream out(out_dir + "/trace_" + std::to_string(inst.id) + ".json");
    out << doc.dump(2) << "\n";

    if (render && !pred.p2q_traces.empty()) {
      // final-layer sampling points per query over the input image
      const SamplingTrace& tr = pred.p2q_traces.back();
      for (int q = 0; q < tr.queries; ++q) {
        auto img = inst.image.pixels;
        double max_w = 1e-12;
        for (int hd = 0; hd < tr.heads; ++hd)
          for (int l = 0; l < tr.levels; ++l)
            for (int p = 0; p < tr.points; ++p) max_w = std::max(max_w, tr.at(q, hd, l, p).weight);
        for (int hd = 0; hd < tr.heads; ++hd) {
          for (int l = 0; l < tr.levels; ++l) {
            for (int p = 0; p < tr.points; ++p) {
              const auto& e = tr.at(q, hd, l, p);
              const float heat = static_cast<float>(e.weight / max_w);
              draw_disc(img, inst.image.h, inst.image.w, e.x * inst.image.w, e.y * inst.image.h,
                        2.0, {heat, 0.1f, 1.f - heat});
            }
          }
        }
        if (q < inst.keypoints.k() && inst.keypoints.labeled(q)) {
          draw_disc(img, inst.image.h, inst.image.w, inst.keypoints.x(q) * inst.image.w,
                    inst.keypoints.y(q) * inst.image.h, 3.5, {1.f, 1.f, 0.f});
        }
        write_png(out_dir + "/render_" + std::to_string(inst.id) + "_q" + std::to_string(q) + ".png",
                  img, inst.image.h, inst.image.w);
      }
    }
  }

  if (introspect.q2q_matrices) {
    for (int d = 0; d < n_dec; ++d) {
      std::ofstream out(out_dir + "/q2q_layer" + std::to_string(d) + ".csv");
      out << std::setprecision(10);
      const auto& mat = q2q_sum[static_cast<std::size_t>(d)];
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          out << mat[static_cast<std::size_t>(i) * k + j] << (j + 1 < k ? "," : "");
        }
        out << "\n";
      }
    }
  }
}

ImageCrop read_image_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open image file: " + path);
  json j = json::parse(in);
  ImageCrop img;
  img.h = j.at("height").get<int>();
  img.w = j.at("width").get<int>();
  const auto px = j.at("pixels").get<std::vector<float>>();
  if (static_cast<std::int64_t>(px.size()) != static_cast<std::int64_t>(img.h) * img.w * 3) {
    throw std::runtime_error("image pixel count does not match height*width*3 in " + path);
  }
  img.pixels = px;
  return img;
}

std::string infer_to_json(const TFPoseModel<float>& model, const ImageCrop& image) {
  NoGradGuard no_grad;
  auto pred = model.forward(image_to_tensor<float>(image), RunMode::kInfer);
  json j;
  auto coords_to_json = [](const TensorPtr<float>& t) {
    json rows = json::array();
    const int k = t->shape[0];
    for (int i = 0; i < k; ++i) {
      rows.push_back({t->value[2 * static_cast<std::size_t>(i)], t->value[2 * static_cast<std::size_t>(i) + 1]});
    }
    return rows;
  };
  j["keypoints"] = coords_to_json(pred.coords.back());
  j["y0"] = coords_to_json(pred.y0);
  json layers = json::array();
  for (const auto& c : pred.coords) layers.push_back(coords_to_json(c));
  j["per_layer"] = layers;
  return j.dump(2);
}

}  // namespace tfpose
