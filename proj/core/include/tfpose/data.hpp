#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfpose/keypoints.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

struct SkeletonSpec {
  int k = 0;
  std::vector<std::pair<int, int>> limbs;
  std::vector<int> swap;  // left/right index permutation, size k
  std::vector<std::string> names;

  void validate() const;
};

/// The standard 17-joint COCO skeleton with its left/right swap permutation.
SkeletonSpec coco17_skeleton();
SkeletonSpec load_skeleton(const std::string& path);

/// Cropped person image, h×w×3 floats in [0,1], dimensions divisible by 32.
struct ImageCrop {
  int h = 0, w = 0;
  std::vector<float> pixels;
};

struct PoseInstance {
  ImageCrop image;
  KeypointSet keypoints;  // normalized crop coordinates
  double area = 0;        // bounding-box area in normalized crop units²
  std::int64_t id = 0;
};

template <typename T>
TensorPtr<T> image_to_tensor(const ImageCrop& img);

/// Random articulated stick figure rendered into the crop: limbs as line
/// segments, joints as discs with per-joint distinct colors, all joints kept
/// inside [0.05, 0.95]². Bitwise deterministic given the seed.
PoseInstance synth_pose_sample(std::uint64_t seed, const SkeletonSpec& skel, int h, int w);

struct CocoLoadResult {
  std::vector<PoseInstance> instances;
  int skipped_unlabeled = 0;
};

/// Reads COCO keypoint-annotation JSON. Crops are the annotation bbox
/// expanded to the crop aspect ratio about its center; keypoints move to
/// normalized crop coordinates. Pixels load from `image_root` when a .ppm
/// sibling of the referenced file exists, else stay zero.
CocoLoadResult load_coco_keypoints(const std::string& path, int crop_h, int crop_w,
                                   const std::string& image_root = "");

struct AugmentParams {
  double rotation_deg = 0;  // training range [-40, 40]
  double scale = 1.0;       // training range [0.5, 1.5]
  bool hflip = false;
  std::uint64_t seed = 0;

  /// Enforces the training ranges (the transform itself accepts any value).
  void validate() const;
};

/// Scale, then rotation about the crop center, then optional horizontal flip,
/// applied to pixels (bilinear, zero fill) and keypoints. A flip also applies
/// the skeleton's left/right swap to keypoint indices. Keypoints leaving
/// [0,1]² get visibility 0.
PoseInstance augment(const PoseInstance& inst, const AugmentParams& p, const SkeletonSpec& skel);

void save_dataset_cache(const std::string& path, const std::vector<PoseInstance>& instances);
std::vector<PoseInstance> load_dataset_cache(const std::string& path);

}  // namespace tfpose
