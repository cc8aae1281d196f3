#include "tfpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tfpose/checkpoint.hpp"
#include "tfpose/render.hpp"
#include "tfpose/rng.hpp"

namespace tfpose {

using json = nlohmann::json;

void SkeletonSpec::validate() const {
  if (k < 1) throw std::invalid_argument("skeleton: keypoint count must be >= 1");
  if (static_cast<int>(swap.size()) != k) {
    throw std::invalid_argument("skeleton: swap permutation size does not match keypoint count");
  }
  std::vector<int> seen(static_cast<std::size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    const int j = swap[static_cast<std::size_t>(i)];
    if (j < 0 || j >= k || swap[static_cast<std::size_t>(j)] != i) {
      throw std::invalid_argument("skeleton: swap is not an involution");
    }
    seen[static_cast<std::size_t>(j)] = 1;
  }
  for (int s : seen) {
    if (!s) throw std::invalid_argument("skeleton: swap is not a permutation");
  }
  for (const auto& [a, b] : limbs) {
    if (a < 0 || a >= k || b < 0 || b >= k) throw std::invalid_argument("skeleton: limb index out of range");
  }
}

SkeletonSpec coco17_skeleton() {
  SkeletonSpec s;
  s.k = 17;
  s.names = {"nose",        "left_eye",   "right_eye",  "left_ear",    "right_ear",
             "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
             "right_wrist", "left_hip",   "right_hip",  "left_knee",   "right_knee",
             "left_ankle",  "right_ankle"};
  s.swap = {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15};
  s.limbs = {{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
             {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
             {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}};
  s.validate();
  return s;
}

SkeletonSpec load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("skeleton: cannot open " + path);
  json j = json::parse(in);
  SkeletonSpec s;
  s.k = j.at("k").get<int>();
  for (const auto& limb : j.at("limbs")) {
    s.limbs.emplace_back(limb.at(0).get<int>(), limb.at(1).get<int>());
  }
  s.swap = j.at("swap").get<std::vector<int>>();
  if (j.contains("names")) s.names = j.at("names").get<std::vector<std::string>>();
  s.validate();
  return s;
}

template <typename T>
TensorPtr<T> image_to_tensor(const ImageCrop& img) {
  std::vector<T> data(img.pixels.begin(), img.pixels.end());
  return make_tensor<T>({img.h, img.w, 3}, std::move(data));
}

PoseInstance synth_pose_sample(std::uint64_t seed, const SkeletonSpec& skel, int h, int w) {
  skel.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x5e7f19));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int k = skel.k;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(k));
  for (const auto& [a, b] : skel.limbs) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }

  // articulated layout: random limb lengths/angles over a spanning tree
  std::vector<double> px(static_cast<std::size_t>(k)), py(static_cast<std::size_t>(k));
  std::vector<bool> placed(static_cast<std::size_t>(k), false);
  for (int root = 0; root < k; ++root) {
    if (placed[static_cast<std::size_t>(root)]) continue;
    px[static_cast<std::size_t>(root)] = 0.3 + 0.4 * unit(rng);
    py[static_cast<std::size_t>(root)] = 0.3 + 0.4 * unit(rng);
    placed[static_cast<std::size_t>(root)] = true;
    std::queue<int> q;
    q.push(root);
    while (!q.empty()) {
      const int cur = q.front();
      q.pop();
      for (int nb : adj[static_cast<std::size_t>(cur)]) {
        if (placed[static_cast<std::size_t>(nb)]) continue;
        const double len = 0.08 + 0.14 * unit(rng);
        const double ang = 2.0 * std::numbers::pi * unit(rng);
        px[static_cast<std::size_t>(nb)] = px[static_cast<std::size_t>(cur)] + len * std::cos(ang);
        py[static_cast<std::size_t>(nb)] = py[static_cast<std::size_t>(cur)] + len * std::sin(ang);
        placed[static_cast<std::size_t>(nb)] = true;
        q.push(nb);
      }
    }
  }

  // normalize the layout into a scaled, randomly placed box inside the margin
  double minx = px[0], maxx = px[0], miny = py[0], maxy = py[0];
  for (int i = 1; i < k; ++i) {
    minx = std::min(minx, px[static_cast<std::size_t>(i)]);
    maxx = std::max(maxx, px[static_cast<std::size_t>(i)]);
    miny = std::min(miny, py[static_cast<std::size_t>(i)]);
    maxy = std::max(maxy, py[static_cast<std::size_t>(i)]);
  }
  const double ex = std::max(maxx - minx, 0.05);
  const double ey = std::max(maxy - miny, 0.05);
  const double s = 0.55 + 0.35 * unit(rng);
  const double ox = 0.05 + (0.90 - s) * unit(rng);
  const double oy = 0.05 + (0.90 - s) * unit(rng);
  for (int i = 0; i < k; ++i) {
    px[static_cast<std::size_t>(i)] = ox + s * (px[static_cast<std::size_t>(i)] - minx) / ex;
    py[static_cast<std::size_t>(i)] = oy + s * (py[static_cast<std::size_t>(i)] - miny) / ey;
  }

  PoseInstance inst;
  inst.id = static_cast<std::int64_t>(seed);
  inst.image.h = h;
  inst.image.w = w;
  inst.image.pixels.assign(static_cast<std::size_t>(h) * w * 3, 0.f);

  const double limb_thick = std::max(1.2, 0.012 * std::min(h, w));
  for (std::size_t li = 0; li < skel.limbs.size(); ++li) {
    const auto& [a, b] = skel.limbs[li];
    auto color = palette_color(k + static_cast<int>(li));
    for (auto& c : color) c *= 0.35f;
    draw_line(inst.image.pixels, h, w, px[static_cast<std::size_t>(a)] * w, py[static_cast<std::size_t>(a)] * h,
              px[static_cast<std::size_t>(b)] * w, py[static_cast<std::size_t>(b)] * h, limb_thick, color);
  }
  const double radius = std::max(2.0, 0.022 * std::min(h, w));
  for (int i = 0; i < k; ++i) {
    draw_disc(inst.image.pixels, h, w, px[static_cast<std::size_t>(i)] * w,
              py[static_cast<std::size_t>(i)] * h, radius, palette_color(i));
  }

  inst.keypoints.xy.resize(static_cast<std::size_t>(k) * 2);
  inst.keypoints.vis.assign(static_cast<std::size_t>(k), 2);
  for (int i = 0; i < k; ++i) {
    inst.keypoints.xy[2 * static_cast<std::size_t>(i)] = px[static_cast<std::size_t>(i)];
    inst.keypoints.xy[2 * static_cast<std::size_t>(i) + 1] = py[static_cast<std::size_t>(i)];
  }
  double bminx = 1, bmaxx = 0, bminy = 1, bmaxy = 0;
  for (int i = 0; i < k; ++i) {
    bminx = std::min(bminx, px[static_cast<std::size_t>(i)]);
    bmaxx = std::max(bmaxx, px[static_cast<std::size_t>(i)]);
    bminy = std::min(bminy, py[static_cast<std::size_t>(i)]);
    bmaxy = std::max(bmaxy, py[static_cast<std::size_t>(i)]);
  }
  inst.area = std::max(bmaxx - bminx, 1e-3) * std::max(bmaxy - bminy, 1e-3);
  return inst;
}

namespace {

bool load_ppm(const std::string& path, std::vector<float>& pixels, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::string magic;
  in >> magic;
  if (magic != "P6") return false;
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w < 1 || h < 1 || maxval != 255) return false;
  in.get();  // single whitespace after the header
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) return false;
  pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) pixels[i] = raw[i] / 255.f;
  return true;
}

std::string with_ppm_extension(const std::string& name) {
  const auto dot = name.find_last_of('.');
  return (dot == std::string::npos ? name : name.substr(0, dot)) + ".ppm";
}

[[noreturn]] void reject_annotation(std::size_t index, const json& ann, const std::string& why) {
  std::string id = ann.is_object() && ann.contains("id") ? ann["id"].dump() : "?";
  throw std::runtime_error("load_coco_keypoints: annotation #" + std::to_string(index) + " (id " +
                           id + "): " + why);
}

}  // namespace

CocoLoadResult load_coco_keypoints(const std::string& path, int crop_h, int crop_w,
                                   const std::string& image_root) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_coco_keypoints: cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("load_coco_keypoints: malformed JSON in " + path + ": " + e.what());
  }
  if (!root.contains("images") || !root.contains("annotations")) {
    throw std::runtime_error("load_coco_keypoints: " + path + " lacks 'images' or 'annotations'");
  }

  struct ImageInfo {
    std::string file_name;
  };
  std::map<std::int64_t, ImageInfo> images;
  for (const auto& img : root["images"]) {
    if (!img.contains("id")) throw std::runtime_error("load_coco_keypoints: image record without 'id'");
    images[img["id"].get<std::int64_t>()] = {img.value("file_name", std::string{})};
  }

  CocoLoadResult result;
  const double aspect = static_cast<double>(crop_w) / crop_h;
  std::size_t index = 0;
  for (const auto& ann : root["annotations"]) {
    const std::size_t i = index++;
    for (const char* field : {"image_id", "keypoints", "bbox", "area", "id"}) {
      if (!ann.contains(field)) reject_annotation(i, ann, std::string("missing field '") + field + "'");
    }
    const auto& kp = ann["keypoints"];
    if (!kp.is_array() || kp.empty() || kp.size() % 3 != 0) {
      reject_annotation(i, ann, "keypoints must be a flat [x,y,v] array");
    }
    const auto& bbox = ann["bbox"];
    if (!bbox.is_array() || bbox.size() != 4) reject_annotation(i, ann, "bbox must be [x,y,w,h]");
    const double bx = bbox[0].get<double>(), by = bbox[1].get<double>();
    const double bw = bbox[2].get<double>(), bh = bbox[3].get<double>();
    if (bw <= 0 || bh <= 0) reject_annotation(i, ann, "bbox has non-positive size");

    const int k = static_cast<int>(kp.size() / 3);
    KeypointSet kps;
    kps.xy.resize(static_cast<std::size_t>(k) * 2);
    kps.vis.resize(static_cast<std::size_t>(k));
    int labeled = 0;

    // expand the bbox to the crop aspect ratio about its center
    double cw, chh;
    if (bw / bh > aspect) {
      cw = bw;
      chh = bw / aspect;
    } else {
      chh = bh;
      cw = bh * aspect;
    }
    const double crop_x = bx + bw / 2 - cw / 2;
    const double crop_y = by + bh / 2 - chh / 2;

    for (int j = 0; j < k; ++j) {
      const double x = kp[3 * j].get<double>();
      const double y = kp[3 * j + 1].get<double>();
      const int v = std::min(kp[3 * j + 2].get<int>(), 2);
      kps.xy[2 * static_cast<std::size_t>(j)] = (x - crop_x) / cw;
      kps.xy[2 * static_cast<std::size_t>(j) + 1] = (y - crop_y) / chh;
      kps.vis[static_cast<std::size_t>(j)] = v;
      labeled += v > 0 ? 1 : 0;
    }
    if (labeled == 0) {
      ++result.skipped_unlabeled;
      continue;
    }

    PoseInstance inst;
    inst.id = ann["id"].get<std::int64_t>();
    inst.keypoints = std::move(kps);
    inst.area = ann["area"].get<double>() / (cw * chh);
    inst.image.h = crop_h;
    inst.image.w = crop_w;
    inst.image.pixels.assign(static_cast<std::size_t>(crop_h) * crop_w * 3, 0.f);

    if (!image_root.empty()) {
      auto it = images.find(ann["image_id"].get<std::int64_t>());
      if (it != images.end() && !it->second.file_name.empty()) {
        std::vector<float> src;
        int sh = 0, sw = 0;
        if (load_ppm(image_root + "/" + with_ppm_extension(it->second.file_name), src, sh, sw)) {
          // output pixel center -> source position inside the crop window
          const std::array<double, 6> inv{cw / crop_w, 0.0, crop_x, 0.0, chh / crop_h, crop_y};
          inst.image.pixels = warp_affine(src, sh, sw, inv, crop_h, crop_w);
        }
      }
    }
    result.instances.push_back(std::move(inst));
  }
  return result;
}

void AugmentParams::validate() const {
  if (rotation_deg < -40.0 || rotation_deg > 40.0) {
    throw std::invalid_argument("AugmentParams: rotation outside [-40, 40] degrees");
  }
  if (scale < 0.5 || scale > 1.5) {
    throw std::invalid_argument("AugmentParams: scale outside [0.5, 1.5]");
  }
}

PoseInstance augment(const PoseInstance& inst, const AugmentParams& p, const SkeletonSpec& skel) {
  const int h = inst.image.h, w = inst.image.w;
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = w / 2.0, cy = h / 2.0;
  const bool rigid = p.rotation_deg == 0.0 && p.scale == 1.0;

  PoseInstance out;
  out.id = inst.id;
  out.area = inst.area * p.scale * p.scale;
  out.image.h = h;
  out.image.w = w;

  // pixels: inverse map output centers through flip, then rotation/scale
  {
    const double f = p.hflip ? -1.0 : 1.0;
    const double b = p.hflip ? static_cast<double>(w) : 0.0;
    const double inv_s = 1.0 / p.scale;
    // d = (f·qx + b − cx, qy − cy); u = R(−θ)·d / s + c
    std::array<double, 6> inv{};
    inv[0] = ct * f * inv_s;
    inv[1] = st * inv_s;
    inv[2] = (ct * (b - cx) - st * cy) * inv_s + cx;
    inv[3] = -st * f * inv_s;
    inv[4] = ct * inv_s;
    inv[5] = (-st * (b - cx) - ct * cy) * inv_s + cy;
    out.image.pixels = warp_affine(inst.image.pixels, h, w, inv, h, w);
  }

  const int k = inst.keypoints.k();
  std::vector<double> xy = inst.keypoints.xy;
  std::vector<int> vis = inst.keypoints.vis;
  if (!rigid) {
    for (int i = 0; i < k; ++i) {
      const double px = xy[2 * static_cast<std::size_t>(i)] * w;
      const double py = xy[2 * static_cast<std::size_t>(i) + 1] * h;
      const double dx = p.scale * (px - cx), dy = p.scale * (py - cy);
      xy[2 * static_cast<std::size_t>(i)] = (cx + ct * dx - st * dy) / w;
      xy[2 * static_cast<std::size_t>(i) + 1] = (cy + st * dx + ct * dy) / h;
    }
  }
  out.keypoints.xy.resize(xy.size());
  out.keypoints.vis.resize(vis.size());
  if (p.hflip) {
    if (static_cast<int>(skel.swap.size()) != k) {
      throw std::invalid_argument("augment: skeleton swap size does not match instance keypoints");
    }
    for (int i = 0; i < k; ++i) {
      const int src = skel.swap[static_cast<std::size_t>(i)];
      out.keypoints.xy[2 * static_cast<std::size_t>(i)] = 1.0 - xy[2 * static_cast<std::size_t>(src)];
      out.keypoints.xy[2 * static_cast<std::size_t>(i) + 1] = xy[2 * static_cast<std::size_t>(src) + 1];
      out.keypoints.vis[static_cast<std::size_t>(i)] = vis[static_cast<std::size_t>(src)];
    }
  } else {
    out.keypoints.xy = xy;
    out.keypoints.vis = vis;
  }
  for (int i = 0; i < k; ++i) {
    if (out.keypoints.vis[static_cast<std::size_t>(i)] > 0) {
      const double x = out.keypoints.xy[2 * static_cast<std::size_t>(i)];
      const double y = out.keypoints.xy[2 * static_cast<std::size_t>(i) + 1];
      if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) out.keypoints.vis[static_cast<std::size_t>(i)] = 0;
    }
  }
  return out;
}

void save_dataset_cache(const std::string& path, const std::vector<PoseInstance>& instances) {
  std::vector<Record> records;
  {
    Record count;
    count.name = "__count__";
    count.dims = {1};
    count.f32 = {static_cast<float>(instances.size())};
    records.push_back(std::move(count));
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string prefix = std::to_string(i) + "/";
    Record img;
    img.name = prefix + "image";
    img.dims = {static_cast<std::uint64_t>(inst.image.h), static_cast<std::uint64_t>(inst.image.w), 3};
    img.f32 = inst.image.pixels;
    records.push_back(std::move(img));

    Record xy;
    xy.name = prefix + "xy";
    xy.is_f64 = true;
    xy.dims = {static_cast<std::uint64_t>(inst.keypoints.k()), 2};
    xy.f64 = inst.keypoints.xy;
    records.push_back(std::move(xy));

    Record vis;
    vis.name = prefix + "vis";
    vis.dims = {static_cast<std::uint64_t>(inst.keypoints.k())};
    for (int v : inst.keypoints.vis) vis.f32.push_back(static_cast<float>(v));
    records.push_back(std::move(vis));

    Record meta;
    meta.name = prefix + "meta";
    meta.is_f64 = true;
    meta.dims = {2};
    meta.f64 = {inst.area, static_cast<double>(inst.id)};
    records.push_back(std::move(meta));
  }
  write_record_file(path, kDatasetCacheVersion, records);
}

std::vector<PoseInstance> load_dataset_cache(const std::string& path) {
  std::vector<Record> records;
  const auto version = read_record_file(path, records);
  if (version != kDatasetCacheVersion) {
    throw std::runtime_error("not a dataset cache (version " + std::to_string(version) + "): " + path);
  }
  std::map<std::string, Record> by_name;
  for (auto& rec : records) by_name.emplace(rec.name, std::move(rec));
  const auto count_it = by_name.find("__count__");
  if (count_it == by_name.end()) throw std::runtime_error("dataset cache lacks __count__: " + path);
  const std::size_t count = static_cast<std::size_t>(count_it->second.f32.at(0));

  std::vector<PoseInstance> instances;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string prefix = std::to_string(i) + "/";
    auto need = [&](const std::string& name) -> const Record& {
      auto it = by_name.find(prefix + name);
      if (it == by_name.end()) {
        throw std::runtime_error("dataset cache record missing: " + prefix + name);
      }
      return it->second;
    };
    PoseInstance inst;
    const Record& img = need("image");
    inst.image.h = static_cast<int>(img.dims.at(0));
    inst.image.w = static_cast<int>(img.dims.at(1));
    inst.image.pixels = img.f32;
    const Record& xy = need("xy");
    inst.keypoints.xy = xy.f64;
    const Record& vis = need("vis");
    for (float v : vis.f32) inst.keypoints.vis.push_back(static_cast<int>(v));
    const Record& meta = need("meta");
    inst.area = meta.f64.at(0);
    inst.id = static_cast<std::int64_t>(meta.f64.at(1));
    instances.push_back(std::move(inst));
  }
  return instances;
}

template TensorPtr<float> image_to_tensor<float>(const ImageCrop&);
template TensorPtr<double> image_to_tensor<double>(const ImageCrop&);

}  // namespace tfpose
