#pragma once

#include <string>
#include <vector>

#include "pfdet/config.hpp"
#include "pfdet/geometry.hpp"
#include "pfdet/tensor.hpp"

namespace pfdet {

enum class Split { Train, Val };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "val"; }

// Paired synthetic inputs: a pseudo-camera image, pseudo-LiDAR BEV planes
// (occupancy + intensity), and ground-truth boxes on the BEV grid.
struct SceneSample {
    std::string sample_id;
    Tensor camera;     // [3, img_h, img_w]
    Tensor lidar_bev;  // [lidar_channels, grid_h, grid_w]
    std::vector<DetectionBox> boxes;
    Split split = Split::Train;
};

// Class identity is split across modalities: camera-only classes share one
// lidar intensity signature but get distinct camera colors; lidar-only
// classes share one camera color but get distinct intensities.
int camera_only_class_count(const SceneSpec& spec);
bool class_is_camera_only(const SceneSpec& spec, int class_id);

// Pure function of (spec, split, index); scenes can be generated in any order.
SceneSample generate_scene(const SceneSpec& spec, Split split, int index);

std::vector<SceneSample> generate_dataset(const SceneSpec& spec, int n_scenes,
                                          Split split = Split::Train);

struct Dataset {
    std::vector<SceneSample> train;
    std::vector<SceneSample> val;
};

Dataset generate_full_dataset(const SceneSpec& spec);

// Uniform sample without replacement of round(n * fraction) TRAIN scenes,
// order preserving; VAL samples pass through untouched.
std::vector<SceneSample> subsample_dataset(const std::vector<SceneSample>& data, double fraction,
                                           uint64_t seed);

// ---- disk layout ------------------------------------------------------------
// dir/MANIFEST.json  ids per split + generator seed + spec
// dir/train/<id>.camera.bin, <id>.lidar.bin, <id>.json
// dir/val/...

struct Manifest {
    SceneSpec spec;
    double fraction = 1.0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

void save_dataset(const std::string& dir, const Dataset& ds, const SceneSpec& spec,
                  double fraction);
Manifest load_manifest(const std::string& dir);
Dataset load_dataset(const std::string& dir);
SceneSample load_scene(const std::string& dir, const std::string& sample_id, Split split);

}  // namespace pfdet
