#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pfdet/util.hpp"

namespace pfdet {

enum class ImageEncoderKind { None, VitLStub, Resnet50Stub };
enum class PointEncoderKind { None, PointBertStub };
enum class UpsampleMode { Repeat, Learned };
enum class PromptInit { Uniform, Zero };
enum class TrainabilityMode { LidarOnly, BranchesParallel, Joint };

// Run-mode presets; concrete field values are materialized into ModelConfig
// so a saved config is self-describing.
enum class RunMode { Baseline, FmOnly, PromptOnly, Pf3det };

struct ImageConfig {
    int in_channels = 3;
    int height = 64;
    int width = 64;
    std::vector<int> stage_channels{32, 64, 96, 128};
    std::vector<int> stage_strides{4, 2, 2, 2};
    int fpn_channels = 64;
};

struct FoundationConfig {
    ImageEncoderKind image_encoder = ImageEncoderKind::None;
    PointEncoderKind point_encoder = PointEncoderKind::None;
    int point_compress_channels = 50;
    UpsampleMode point_upsample_mode = UpsampleMode::Repeat;
    uint64_t foundation_seed = 1234;
};

struct BevConfig {
    int channels = 64;
    int height = 36;
    int width = 36;
    int lidar_channels = 2;
};

struct PromptConfig {
    int level1_channels = 0;
    int level2_channels = 0;
    int level3a_channels = 0;
    int level3b_channels = 0;
    PromptInit init = PromptInit::Uniform;

    bool any_enabled() const {
        return level1_channels > 0 || level2_channels > 0 || level3a_channels > 0 ||
               level3b_channels > 0;
    }
};

struct HeadConfig {
    int num_classes = 4;
    double score_floor = 0.1;
    double nms_iou = 0.5;
    int max_boxes = 32;
    double reg_weight = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

// One record fully determines a model.
struct ModelConfig {
    std::string mode = "baseline";
    ImageConfig image;
    FoundationConfig foundation;
    BevConfig bev;
    PromptConfig prompts;
    HeadConfig head;
    // Freeze everything up to and including F_BEV production; train prompts
    // and all layers after. Off = full fine-tune (stub encoders stay frozen).
    bool freeze_pre_bev = false;

    void validate() const;

    // Derived dimension laws.
    int bev_fine_channels() const { return bev.channels / 2; }
    int bev_coarse_channels() const { return bev.channels; }
    int bev_fpn_channels() const { return bev.channels / 2; }
    int fusion_branch_channels() const { return bev.channels / 4; }

    std::string canonical_json() const;
    std::string config_hash() const;  // fnv1a64 over canonical text, hex
};

struct SceneSpec {
    int grid_h = 36;
    int grid_w = 36;
    int img_h = 64;
    int img_w = 64;
    int classes = 4;
    int min_objects = 1;
    int max_objects = 6;
    // Classes [0, round(f*K)) leave class evidence only in the camera planes;
    // the rest only in the lidar intensity plane.
    double camera_only_fraction = 0.5;
    int max_classes_per_scene = 2;
    double camera_noise = 0.05;
    double lidar_noise = 0.05;
    double size_min_x = 4.0;
    double size_max_x = 8.0;
    double size_min_y = 2.5;
    double size_max_y = 5.0;
    std::vector<double> class_size_scale;  // per-class multiplier; empty = all 1
    int train_scenes = 600;
    int val_scenes = 150;
    uint64_t seed = 7;
    // Provenance only: source-domain voxel size, not used by the generator.
    std::vector<double> voxel_size{0.075, 0.075, 0.2};

    void validate() const;
};

struct StageSchedule {
    int stage_id = 1;  // 1..3
    int epochs = 1;
    double learning_rate = 1e-4;
    TrainabilityMode trainability_mode = TrainabilityMode::LidarOnly;
    std::optional<std::string> load_from;

    void validate() const;
};

struct DataConfig {
    SceneSpec spec;
    std::string dataset_dir = "data/desk";
    double fraction = 1.0;
    uint64_t seed = 7;
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    std::vector<StageSchedule> schedule;
    std::string output_dir = "runs/default";

    void validate() const;
    std::string to_json_text(int indent = 2) const;
    static RunConfig from_json_text(const std::string& text);
};

// ---- presets ---------------------------------------------------------------

ModelConfig desk_model_config(RunMode mode);
ModelConfig paper_model_config(RunMode mode);
SceneSpec desk_scene_spec();
std::vector<StageSchedule> desk_schedule();
std::vector<StageSchedule> paper_schedule();
RunConfig desk_run_config(RunMode mode);

RunMode parse_run_mode(const std::string& s);
std::string run_mode_name(RunMode m);

// JSON text for ModelConfig alone (used by bindings and tests).
std::string model_config_to_json(const ModelConfig& m, int indent = 2);
ModelConfig model_config_from_json(const std::string& text);

std::string scene_spec_to_json(const SceneSpec& s, int indent = 2);
SceneSpec scene_spec_from_json(const std::string& text);

}  // namespace pfdet
