#include "pfdet/config.hpp"

#include <json.hpp>

namespace pfdet {

using nlohmann::json;

namespace {

const char* image_encoder_name(ImageEncoderKind k) {
    switch (k) {
        case ImageEncoderKind::None: return "none";
        case ImageEncoderKind::VitLStub: return "vit_l_stub";
        case ImageEncoderKind::Resnet50Stub: return "resnet50_stub";
    }
    return "none";
}

ImageEncoderKind image_encoder_from(const std::string& s) {
    if (s == "none") return ImageEncoderKind::None;
    if (s == "vit_l_stub") return ImageEncoderKind::VitLStub;
    if (s == "resnet50_stub") return ImageEncoderKind::Resnet50Stub;
    throw ConfigError("unknown image encoder: " + s);
}

const char* point_encoder_name(PointEncoderKind k) {
    return k == PointEncoderKind::None ? "none" : "pointbert_stub";
}

PointEncoderKind point_encoder_from(const std::string& s) {
    if (s == "none") return PointEncoderKind::None;
    if (s == "pointbert_stub") return PointEncoderKind::PointBertStub;
    throw ConfigError("unknown point encoder: " + s);
}

const char* upsample_name(UpsampleMode m) {
    return m == UpsampleMode::Repeat ? "repeat" : "learned";
}

UpsampleMode upsample_from(const std::string& s) {
    if (s == "repeat") return UpsampleMode::Repeat;
    if (s == "learned") return UpsampleMode::Learned;
    throw ConfigError("unknown upsample mode: " + s);
}

const char* prompt_init_name(PromptInit p) { return p == PromptInit::Uniform ? "uniform" : "zero"; }

PromptInit prompt_init_from(const std::string& s) {
    if (s == "uniform") return PromptInit::Uniform;
    if (s == "zero") return PromptInit::Zero;
    throw ConfigError("unknown prompt init: " + s);
}

const char* trainability_name(TrainabilityMode m) {
    switch (m) {
        case TrainabilityMode::LidarOnly: return "lidar_only";
        case TrainabilityMode::BranchesParallel: return "branches_parallel";
        case TrainabilityMode::Joint: return "joint";
    }
    return "joint";
}

TrainabilityMode trainability_from(const std::string& s) {
    if (s == "lidar_only") return TrainabilityMode::LidarOnly;
    if (s == "branches_parallel") return TrainabilityMode::BranchesParallel;
    if (s == "joint") return TrainabilityMode::Joint;
    throw ConfigError("unknown trainability mode: " + s);
}

json to_json(const ImageConfig& c) {
    return json{{"in_channels", c.in_channels},       {"height", c.height},
                {"width", c.width},                   {"stage_channels", c.stage_channels},
                {"stage_strides", c.stage_strides},   {"fpn_channels", c.fpn_channels}};
}

ImageConfig image_from_json(const json& j) {
    ImageConfig c;
    c.in_channels = j.at("in_channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.stage_strides = j.at("stage_strides").get<std::vector<int>>();
    c.fpn_channels = j.at("fpn_channels");
    return c;
}

json to_json(const FoundationConfig& c) {
    return json{{"image_encoder", image_encoder_name(c.image_encoder)},
                {"point_encoder", point_encoder_name(c.point_encoder)},
                {"point_compress_channels", c.point_compress_channels},
                {"point_upsample_mode", upsample_name(c.point_upsample_mode)},
                {"foundation_seed", c.foundation_seed}};
}

FoundationConfig foundation_from_json(const json& j) {
    FoundationConfig c;
    c.image_encoder = image_encoder_from(j.at("image_encoder"));
    c.point_encoder = point_encoder_from(j.at("point_encoder"));
    c.point_compress_channels = j.at("point_compress_channels");
    c.point_upsample_mode = upsample_from(j.at("point_upsample_mode"));
    c.foundation_seed = j.at("foundation_seed");
    return c;
}

json to_json(const BevConfig& c) {
    return json{{"channels", c.channels},
                {"height", c.height},
                {"width", c.width},
                {"lidar_channels", c.lidar_channels}};
}

BevConfig bev_from_json(const json& j) {
    BevConfig c;
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.lidar_channels = j.at("lidar_channels");
    return c;
}

json to_json(const PromptConfig& c) {
    return json{{"level1_channels", c.level1_channels},
                {"level2_channels", c.level2_channels},
                {"level3a_channels", c.level3a_channels},
                {"level3b_channels", c.level3b_channels},
                {"init", prompt_init_name(c.init)}};
}

PromptConfig prompts_from_json(const json& j) {
    PromptConfig c;
    c.level1_channels = j.at("level1_channels");
    c.level2_channels = j.at("level2_channels");
    c.level3a_channels = j.at("level3a_channels");
    c.level3b_channels = j.at("level3b_channels");
    c.init = prompt_init_from(j.at("init"));
    return c;
}

json to_json(const HeadConfig& c) {
    return json{{"num_classes", c.num_classes}, {"score_floor", c.score_floor},
                {"nms_iou", c.nms_iou},         {"max_boxes", c.max_boxes},
                {"reg_weight", c.reg_weight},   {"focal_alpha", c.focal_alpha},
                {"focal_gamma", c.focal_gamma}};
}

HeadConfig head_from_json(const json& j) {
    HeadConfig c;
    c.num_classes = j.at("num_classes");
    c.score_floor = j.at("score_floor");
    c.nms_iou = j.at("nms_iou");
    c.max_boxes = j.at("max_boxes");
    c.reg_weight = j.at("reg_weight");
    c.focal_alpha = j.at("focal_alpha");
    c.focal_gamma = j.at("focal_gamma");
    return c;
}

json to_json(const ModelConfig& c) {
    return json{{"mode", c.mode},
                {"image", to_json(c.image)},
                {"foundation", to_json(c.foundation)},
                {"bev", to_json(c.bev)},
                {"prompts", to_json(c.prompts)},
                {"head", to_json(c.head)},
                {"freeze_pre_bev", c.freeze_pre_bev}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig c;
    c.mode = j.at("mode");
    c.image = image_from_json(j.at("image"));
    c.foundation = foundation_from_json(j.at("foundation"));
    c.bev = bev_from_json(j.at("bev"));
    c.prompts = prompts_from_json(j.at("prompts"));
    c.head = head_from_json(j.at("head"));
    c.freeze_pre_bev = j.at("freeze_pre_bev");
    return c;
}

json to_json(const SceneSpec& c) {
    return json{{"grid_h", c.grid_h},
                {"grid_w", c.grid_w},
                {"img_h", c.img_h},
                {"img_w", c.img_w},
                {"classes", c.classes},
                {"min_objects", c.min_objects},
                {"max_objects", c.max_objects},
                {"camera_only_fraction", c.camera_only_fraction},
                {"max_classes_per_scene", c.max_classes_per_scene},
                {"camera_noise", c.camera_noise},
                {"lidar_noise", c.lidar_noise},
                {"size_min_x", c.size_min_x},
                {"size_max_x", c.size_max_x},
                {"size_min_y", c.size_min_y},
                {"size_max_y", c.size_max_y},
                {"class_size_scale", c.class_size_scale},
                {"train_scenes", c.train_scenes},
                {"val_scenes", c.val_scenes},
                {"seed", c.seed},
                {"voxel_size", c.voxel_size}};
}

SceneSpec scene_spec_from_json(const json& j) {
    SceneSpec c;
    c.grid_h = j.at("grid_h");
    c.grid_w = j.at("grid_w");
    c.img_h = j.at("img_h");
    c.img_w = j.at("img_w");
    c.classes = j.at("classes");
    c.min_objects = j.at("min_objects");
    c.max_objects = j.at("max_objects");
    c.camera_only_fraction = j.at("camera_only_fraction");
    c.max_classes_per_scene = j.at("max_classes_per_scene");
    c.camera_noise = j.at("camera_noise");
    c.lidar_noise = j.at("lidar_noise");
    c.size_min_x = j.at("size_min_x");
    c.size_max_x = j.at("size_max_x");
    c.size_min_y = j.at("size_min_y");
    c.size_max_y = j.at("size_max_y");
    c.class_size_scale = j.at("class_size_scale").get<std::vector<double>>();
    c.train_scenes = j.at("train_scenes");
    c.val_scenes = j.at("val_scenes");
    c.seed = j.at("seed");
    c.voxel_size = j.at("voxel_size").get<std::vector<double>>();
    return c;
}

json to_json(const StageSchedule& c) {
    json j{{"stage_id", c.stage_id},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"trainability_mode", trainability_name(c.trainability_mode)}};
    if (c.load_from) j["load_from"] = *c.load_from;
    return j;
}

StageSchedule schedule_from_json(const json& j) {
    StageSchedule c;
    c.stage_id = j.at("stage_id");
    c.epochs = j.at("epochs");
    c.learning_rate = j.at("learning_rate");
    c.trainability_mode = trainability_from(j.at("trainability_mode"));
    if (j.contains("load_from")) c.load_from = j.at("load_from").get<std::string>();
    return c;
}

}  // namespace

void ModelConfig::validate() const {
    if (image.stage_channels.empty())
        throw ConfigError("image.stage_channels must not be empty");
    if (image.stage_channels.size() != image.stage_strides.size())
        throw ConfigError("image.stage_channels and stage_strides must have equal length");
    for (int s : image.stage_strides)
        if (s < 1) throw ConfigError("image stage strides must be >= 1");
    if (bev.channels % 4 != 0)
        throw ConfigError("bev.channels must be divisible by 4 (fusion branches)");
    if (bev.height % 2 != 0 || bev.width % 2 != 0)
        throw ConfigError("bev grid must be even (BEV backbone downsamples by 2)");
    if (prompts.level1_channels < 0 || prompts.level2_channels < 0 ||
        prompts.level3a_channels < 0 || prompts.level3b_channels < 0)
        throw ConfigError("prompt channel counts must be >= 0");
    if (foundation.point_encoder != PointEncoderKind::None &&
        (foundation.point_compress_channels < 1 || foundation.point_compress_channels > 256))
        throw ConfigError("point_compress_channels must be in [1, 256]");
    if (head.num_classes < 1) throw ConfigError("head.num_classes must be >= 1");
}

void SceneSpec::validate() const {
    if (classes < 2) throw ConfigError("scene spec: classes must be >= 2");
    if (camera_only_fraction < 0.0 || camera_only_fraction > 1.0)
        throw ConfigError("scene spec: camera_only_fraction must be in [0, 1]");
    if (min_objects < 0 || max_objects < min_objects)
        throw ConfigError("scene spec: bad objects-per-scene range");
    if (grid_h < 8 || grid_w < 8) throw ConfigError("scene spec: grid too small");
    if (!class_size_scale.empty() && static_cast<int>(class_size_scale.size()) != classes)
        throw ConfigError("scene spec: class_size_scale must have one entry per class");
    if (max_classes_per_scene < 1)
        throw ConfigError("scene spec: max_classes_per_scene must be >= 1");
}

void StageSchedule::validate() const {
    if (stage_id < 1 || stage_id > 3) throw ConfigError("schedule: stage_id must be 1..3");
    if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("schedule: learning_rate must be > 0");
}

void RunConfig::validate() const {
    model.validate();
    data.spec.validate();
    if (data.fraction <= 0.0 || data.fraction > 1.0)
        throw ConfigError("data.fraction must be in (0, 1]");
    for (const auto& s : schedule) s.validate();
}

std::string ModelConfig::canonical_json() const { return to_json(*this).dump(); }

std::string ModelConfig::config_hash() const { return hex64(fnv1a64(canonical_json())); }

std::string RunConfig::to_json_text(int indent) const {
    json j{{"model", to_json(model)},
           {"data", json{{"spec", to_json(data.spec)},
                         {"dataset_dir", data.dataset_dir},
                         {"fraction", data.fraction},
                         {"seed", data.seed}}},
           {"schedule", json::array()},
           {"output_dir", output_dir}};
    for (const auto& s : schedule) j["schedule"].push_back(to_json(s));
    return j.dump(indent);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    RunConfig c;
    c.model = model_from_json(j.at("model"));
    c.data.spec = scene_spec_from_json(j.at("data").at("spec"));
    c.data.dataset_dir = j.at("data").at("dataset_dir");
    c.data.fraction = j.at("data").at("fraction");
    c.data.seed = j.at("data").at("seed");
    for (const auto& s : j.at("schedule")) c.schedule.push_back(schedule_from_json(s));
    c.output_dir = j.at("output_dir");
    return c;
}

std::string model_config_to_json(const ModelConfig& m, int indent) {
    return to_json(m).dump(indent);
}

ModelConfig model_config_from_json(const std::string& text) {
    return model_from_json(json::parse(text));
}

std::string scene_spec_to_json(const SceneSpec& s, int indent) { return to_json(s).dump(indent); }

SceneSpec scene_spec_from_json(const std::string& text) {
    return scene_spec_from_json(json::parse(text));
}

// ---- presets ----------------------------------------------------------------

RunMode parse_run_mode(const std::string& s) {
    if (s == "baseline") return RunMode::Baseline;
    if (s == "fm_only") return RunMode::FmOnly;
    if (s == "prompt_only") return RunMode::PromptOnly;
    if (s == "pf3det") return RunMode::Pf3det;
    throw ConfigError("unknown mode: " + s + " (expected baseline|fm_only|prompt_only|pf3det)");
}

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Baseline: return "baseline";
        case RunMode::FmOnly: return "fm_only";
        case RunMode::PromptOnly: return "prompt_only";
        case RunMode::Pf3det: return "pf3det";
    }
    return "baseline";
}

namespace {
void apply_mode(ModelConfig& c, RunMode mode, int l1, int l2) {
    c.mode = run_mode_name(mode);
    switch (mode) {
        case RunMode::Baseline:
            break;
        case RunMode::FmOnly:
            c.foundation.image_encoder = ImageEncoderKind::VitLStub;
            break;
        case RunMode::PromptOnly:
            c.prompts.level1_channels = l1;
            c.prompts.level2_channels = l2;
            c.freeze_pre_bev = true;
            break;
        case RunMode::Pf3det:
            c.foundation.image_encoder = ImageEncoderKind::VitLStub;
            c.prompts.level1_channels = l1;
            c.prompts.level2_channels = l2;
            c.freeze_pre_bev = true;
            break;
    }
}
}  // namespace

ModelConfig desk_model_config(RunMode mode) {
    ModelConfig c;  // defaults are the desk scale
    apply_mode(c, mode, 8, 12);
    return c;
}

ModelConfig paper_model_config(RunMode mode) {
    ModelConfig c;
    c.image.height = 448;
    c.image.width = 800;
    c.image.stage_channels = {64, 128, 256, 512};
    c.image.fpn_channels = 256;
    c.bev.channels = 256;
    c.bev.height = 180;
    c.bev.width = 180;
    c.head.num_classes = 4;
    apply_mode(c, mode, 100, 150);
    return c;
}

SceneSpec desk_scene_spec() { return SceneSpec{}; }

// Desk rates are scaled up from the source preset: the desk models train
// from scratch for a handful of epochs, where 1e-4 steps cannot leave the
// initialization basin. The stage ratios (flat, flat, /10) are preserved.
std::vector<StageSchedule> desk_schedule() {
    return {
        {1, 4, 3e-3, TrainabilityMode::LidarOnly, std::nullopt},
        {2, 3, 1e-3, TrainabilityMode::BranchesParallel, std::nullopt},
        {3, 3, 1e-4, TrainabilityMode::Joint, std::nullopt},
    };
}

std::vector<StageSchedule> paper_schedule() {
    return {
        {1, 20, 1e-4, TrainabilityMode::LidarOnly, std::nullopt},
        {2, 6, 1e-4, TrainabilityMode::BranchesParallel, std::nullopt},
        {3, 6, 1e-5, TrainabilityMode::Joint, std::nullopt},
    };
}

RunConfig desk_run_config(RunMode mode) {
    RunConfig c;
    c.model = desk_model_config(mode);
    c.data.spec = desk_scene_spec();
    c.data.fraction = 1.0;
    c.data.seed = 7;
    c.schedule = desk_schedule();
    c.output_dir = "runs/" + run_mode_name(mode);
    return c;
}

}  // namespace pfdet
