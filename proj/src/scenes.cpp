#include "pfdet/scenes.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "pfdet/checkpoint.hpp"

namespace pfdet {

namespace fs = std::filesystem;
using nlohmann::json;

int camera_only_class_count(const SceneSpec& spec) {
    return static_cast<int>(std::lround(spec.camera_only_fraction * spec.classes));
}

bool class_is_camera_only(const SceneSpec& spec, int class_id) {
    return class_id < camera_only_class_count(spec);
}

namespace {

struct Rgb {
    double r, g, b;
};

// Saturated palette for camera-evident classes; cycles past six.
Rgb camera_class_color(int idx) {
    static const Rgb palette[] = {
        {0.90, 0.12, 0.10}, {0.10, 0.80, 0.15}, {0.12, 0.25, 0.92},
        {0.88, 0.82, 0.10}, {0.80, 0.12, 0.82}, {0.10, 0.80, 0.80},
    };
    return palette[idx % 6];
}

const Rgb kNeutralColor{0.55, 0.55, 0.55};
const double kSharedIntensity = 0.6;

double lidar_class_intensity(const SceneSpec& spec, int class_id) {
    if (class_is_camera_only(spec, class_id)) return kSharedIntensity;
    const int n_cam = camera_only_class_count(spec);
    const int n_lidar = spec.classes - n_cam;
    const int j = class_id - n_cam;
    if (n_lidar <= 1) return 1.8;
    return 0.15 + 1.65 * static_cast<double>(j) / (n_lidar - 1);
}

// Fraction of a cell covered by the box, estimated on a 2x2 subgrid.
double cell_coverage(const DetectionBox& b, double cx, double cy) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    int hits = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double px = cx - 0.25 + 0.5 * j;
            const double py = cy - 0.25 + 0.5 * i;
            const double dx = px - b.center_x, dy = py - b.center_y;
            const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
            if (std::abs(lx) <= 0.5 * b.size_x && std::abs(ly) <= 0.5 * b.size_y) ++hits;
        }
    return hits / 4.0;
}

// Local x of the point in box coordinates; > 0 means the front half.
bool in_front_half(const DetectionBox& b, double px, double py) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    return c * (px - b.center_x) + s * (py - b.center_y) > 0.0;
}

}  // namespace

SceneSample generate_scene(const SceneSpec& spec, Split split, int index) {
    spec.validate();
    auto rng = rng_for(spec.seed, std::string(split_name(split)) + "/" + std::to_string(index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SceneSample sample;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%06d", split_name(split), index);
    sample.sample_id = idbuf;
    sample.split = split;
    sample.camera = Tensor({3, spec.img_h, spec.img_w});
    sample.lidar_bev = Tensor({2, spec.grid_h, spec.grid_w});

    // Scenes draw their objects from a small set of active classes, so the
    // camera's global appearance narrows down per-object identity.
    std::vector<int> classes(spec.classes);
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    const int n_active =
        1 + static_cast<int>(unit(rng) * std::min(spec.max_classes_per_scene, spec.classes));
    std::vector<int> active(classes.begin(),
                            classes.begin() + std::min<size_t>(n_active, classes.size()));

    const int n_obj =
        spec.min_objects +
        static_cast<int>(unit(rng) * (spec.max_objects - spec.min_objects + 1) * 0.999999);

    for (int k = 0; k < n_obj; ++k) {
        const int cls = active[static_cast<size_t>(unit(rng) * active.size() * 0.999999)];
        const double scale =
            spec.class_size_scale.empty() ? 1.0 : spec.class_size_scale[cls];
        DetectionBox box;
        box.class_id = cls;
        box.size_x = scale * (spec.size_min_x + unit(rng) * (spec.size_max_x - spec.size_min_x));
        box.size_y = scale * (spec.size_min_y + unit(rng) * (spec.size_max_y - spec.size_min_y));
        box.yaw = -M_PI + unit(rng) * 2.0 * M_PI;
        const double margin = 0.5 * std::hypot(box.size_x, box.size_y) + 0.5;
        if (2.0 * margin >= spec.grid_w || 2.0 * margin >= spec.grid_h) continue;
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            box.center_x = margin + unit(rng) * (spec.grid_w - 2.0 * margin);
            box.center_y = margin + unit(rng) * (spec.grid_h - 2.0 * margin);
            placed = true;
            for (const auto& other : sample.boxes) {
                const double d = std::hypot(box.center_x - other.center_x,
                                            box.center_y - other.center_y);
                if (d < 5.0) {
                    placed = false;
                    break;
                }
            }
        }
        if (placed) sample.boxes.push_back(box);
    }

    // LiDAR planes. Plane 0 carries geometry with a denser front half, so
    // orientation is recoverable; plane 1 carries the class intensity
    // signature unmodulated, so lidar-evident classes stay separable.
    for (const auto& box : sample.boxes) {
        const double intensity = lidar_class_intensity(spec, box.class_id);
        for (int r = 0; r < spec.grid_h; ++r)
            for (int c = 0; c < spec.grid_w; ++c) {
                const double cx = c + 0.5, cy = r + 0.5;
                const double cov = cell_coverage(box, cx, cy);
                if (cov <= 0.0) continue;
                const double front = in_front_half(box, cx, cy) ? 1.0 : 0.65;
                sample.lidar_bev.at(0, r, c) =
                    std::max(sample.lidar_bev.at(0, r, c), cov * front);
                sample.lidar_bev.at(1, r, c) =
                    std::max(sample.lidar_bev.at(1, r, c), cov * intensity);
            }
    }

    // Camera: top-down pseudo-image at image resolution; blobs carry class
    // colors (camera-evident classes) or the shared neutral color.
    const double sx_img = static_cast<double>(spec.img_w) / spec.grid_w;
    const double sy_img = static_cast<double>(spec.img_h) / spec.grid_h;
    for (int r = 0; r < spec.img_h; ++r)
        for (int c = 0; c < spec.img_w; ++c) {
            sample.camera.at(0, r, c) = 0.2;
            sample.camera.at(1, r, c) = 0.2;
            sample.camera.at(2, r, c) = 0.2;
        }
    for (const auto& box : sample.boxes) {
        Rgb color = class_is_camera_only(spec, box.class_id)
                        ? camera_class_color(box.class_id)
                        : kNeutralColor;
        const double jr = 1.0 + 0.08 * (unit(rng) - 0.5);
        const double jg = 1.0 + 0.08 * (unit(rng) - 0.5);
        const double jb = 1.0 + 0.08 * (unit(rng) - 0.5);
        DetectionBox img_box = box;
        img_box.center_x *= sx_img;
        img_box.center_y *= sy_img;
        img_box.size_x *= sx_img;
        img_box.size_y *= sy_img;
        for (int r = 0; r < spec.img_h; ++r)
            for (int c = 0; c < spec.img_w; ++c) {
                const double cov = cell_coverage(img_box, c + 0.5, r + 0.5);
                if (cov <= 0.0) continue;
                sample.camera.at(0, r, c) += cov * (color.r * jr - 0.2);
                sample.camera.at(1, r, c) += cov * (color.g * jg - 0.2);
                sample.camera.at(2, r, c) += cov * (color.b * jb - 0.2);
            }
    }

    // Additive noise, fixed iteration order for determinism.
    std::uniform_real_distribution<double> lnoise(-spec.lidar_noise, spec.lidar_noise);
    for (auto& v : sample.lidar_bev.data) v = std::clamp(v + lnoise(rng), 0.0, 2.0);
    std::uniform_real_distribution<double> cnoise(-spec.camera_noise, spec.camera_noise);
    for (auto& v : sample.camera.data) v = std::clamp(v + cnoise(rng), 0.0, 1.5);

    return sample;
}

std::vector<SceneSample> generate_dataset(const SceneSpec& spec, int n_scenes, Split split) {
    if (n_scenes < 1) throw ConfigError("generate_dataset: n_scenes must be >= 1");
    std::vector<SceneSample> out;
    out.reserve(n_scenes);
    for (int i = 0; i < n_scenes; ++i) out.push_back(generate_scene(spec, split, i));
    return out;
}

Dataset generate_full_dataset(const SceneSpec& spec) {
    Dataset ds;
    ds.train = generate_dataset(spec, spec.train_scenes, Split::Train);
    ds.val = generate_dataset(spec, spec.val_scenes, Split::Val);
    return ds;
}

std::vector<SceneSample> subsample_dataset(const std::vector<SceneSample>& data, double fraction,
                                           uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ConfigError("subsample_dataset: fraction must be in (0, 1]");
    std::vector<size_t> train_idx;
    for (size_t i = 0; i < data.size(); ++i)
        if (data[i].split == Split::Train) train_idx.push_back(i);
    const auto k = static_cast<size_t>(std::lround(fraction * train_idx.size()));
    if (k == 0 && !train_idx.empty())
        throw ConfigError("subsample_dataset: fraction selects zero training scenes");
    auto rng = rng_for(seed, "subsample");
    std::vector<size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(k);
    std::sort(order.begin(), order.end());
    std::vector<bool> keep(data.size(), false);
    for (size_t i : order) keep[i] = true;
    std::vector<SceneSample> out;
    for (size_t i = 0; i < data.size(); ++i)
        if (keep[i] || data[i].split == Split::Val) out.push_back(data[i]);
    return out;
}

// ---- disk ------------------------------------------------------------------

namespace {

json boxes_to_json(const std::vector<DetectionBox>& boxes) {
    json arr = json::array();
    for (const auto& b : boxes) {
        arr.push_back(json{{"class_id", b.class_id},
                           {"cx", b.center_x},
                           {"cy", b.center_y},
                           {"sx", b.size_x},
                           {"sy", b.size_y},
                           {"yaw", b.yaw}});
    }
    return arr;
}

std::vector<DetectionBox> boxes_from_json(const json& arr) {
    std::vector<DetectionBox> boxes;
    for (const auto& j : arr) {
        DetectionBox b;
        b.class_id = j.at("class_id");
        b.center_x = j.at("cx");
        b.center_y = j.at("cy");
        b.size_x = j.at("sx");
        b.size_y = j.at("sy");
        b.yaw = j.at("yaw");
        boxes.push_back(b);
    }
    return boxes;
}

void save_scene(const fs::path& split_dir, const SceneSample& s) {
    save_tensor_file((split_dir / (s.sample_id + ".camera.bin")).string(), s.camera);
    save_tensor_file((split_dir / (s.sample_id + ".lidar.bin")).string(), s.lidar_bev);
    json side{{"sample_id", s.sample_id},
              {"split", split_name(s.split)},
              {"boxes", boxes_to_json(s.boxes)}};
    std::ofstream os(split_dir / (s.sample_id + ".json"));
    os << side.dump(2) << "\n";
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds, const SceneSpec& spec,
                  double fraction) {
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "val");
    Manifest m;
    m.spec = spec;
    m.fraction = fraction;
    for (const auto& s : ds.train) {
        save_scene(fs::path(dir) / "train", s);
        m.train_ids.push_back(s.sample_id);
    }
    for (const auto& s : ds.val) {
        save_scene(fs::path(dir) / "val", s);
        m.val_ids.push_back(s.sample_id);
    }
    json j{{"seed", spec.seed},
           {"fraction", fraction},
           {"spec", json::parse(scene_spec_to_json(spec, 0))},
           {"train_ids", m.train_ids},
           {"val_ids", m.val_ids}};
    std::ofstream os(fs::path(dir) / "MANIFEST.json");
    os << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "MANIFEST.json");
    if (!is) throw std::runtime_error("no MANIFEST.json in " + dir);
    json j = json::parse(is);
    Manifest m;
    m.spec = scene_spec_from_json(j.at("spec").dump());
    m.fraction = j.at("fraction");
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    return m;
}

SceneSample load_scene(const std::string& dir, const std::string& sample_id, Split split) {
    const fs::path split_dir = fs::path(dir) / split_name(split);
    SceneSample s;
    s.sample_id = sample_id;
    s.split = split;
    s.camera = load_tensor_file((split_dir / (sample_id + ".camera.bin")).string());
    s.lidar_bev = load_tensor_file((split_dir / (sample_id + ".lidar.bin")).string());
    std::ifstream is(split_dir / (sample_id + ".json"));
    if (!is) throw std::runtime_error("missing sidecar for " + sample_id);
    json j = json::parse(is);
    s.boxes = boxes_from_json(j.at("boxes"));
    return s;
}

Dataset load_dataset(const std::string& dir) {
    Manifest m = load_manifest(dir);
    Dataset ds;
    for (const auto& id : m.train_ids) ds.train.push_back(load_scene(dir, id, Split::Train));
    for (const auto& id : m.val_ids) ds.val.push_back(load_scene(dir, id, Split::Val));
    return ds;
}

}  // namespace pfdet
