#include "pfdet/prompts.hpp"

namespace pfdet {

namespace {
ag::InitSpec prompt_init_spec(PromptInit init) {
    if (init == PromptInit::Zero) return {ag::Init::Zeros, 0, 0, 0};
    return {ag::Init::Uniform, -0.01, 0.01, 0};
}
}  // namespace

PromptSet init_prompts(ag::ParamStore& store, const ModelConfig& cfg, uint64_t seed) {
    PromptSet p;
    const auto& pc = cfg.prompts;
    const ag::InitSpec init = prompt_init_spec(pc.init);
    const int h = cfg.bev.height, w = cfg.bev.width;
    if (pc.level1_channels > 0)
        p.level1 = store.create("prompt.level1", {pc.level1_channels, h, w}, init, seed);
    if (pc.level2_channels > 0)
        p.level2 = store.create("prompt.level2", {pc.level2_channels, h, w}, init, seed);
    if (pc.level3a_channels > 0)
        p.level3a = store.create("prompt.level3a", {pc.level3a_channels, h, w}, init, seed);
    if (pc.level3b_channels > 0)
        p.level3b = store.create("prompt.level3b", {pc.level3b_channels, h / 2, w / 2}, init,
                                 seed);
    return p;
}

AlignConv make_align(ag::ParamStore& store, int bev_channels, int level2_channels,
                     uint64_t seed) {
    AlignConv a;
    a.in_channels = bev_channels + level2_channels;
    a.out_channels = bev_channels;
    a.w = store.create("align.weight", {a.out_channels, a.in_channels, 1, 1},
                       {ag::Init::IdentityMatrix, 0, 0, 0}, seed);
    a.b = store.create("align.bias", {a.out_channels}, {ag::Init::Zeros, 0, 0, 0}, seed);
    return a;
}

namespace {
void check_prompt_spatial(const FeatureMap& f, const ag::Value& prompt, const char* level) {
    if (prompt->val.shape[1] != f.height() || prompt->val.shape[2] != f.width())
        throw DimensionError(std::string("attach_") + level + ": prompt is " +
                             prompt->val.shape_str() + " but the feature map is " +
                             f.v->val.shape_str());
}
}  // namespace

FeatureMap attach_level1(const FeatureMap& f_bev, const PromptSet& p) {
    if (!p.level1) return f_bev;
    check_prompt_spatial(f_bev, p.level1, "level1");
    return feature_map(ag::concat_channels({f_bev.v, p.level1}), f_bev.role);
}

FeatureMap attach_level2_align(const FeatureMap& f_fused, const PromptSet& p,
                               const AlignConv& align) {
    if (!p.level2) return f_fused;
    check_prompt_spatial(f_fused, p.level2, "level2");
    auto cat = ag::concat_channels({f_fused.v, p.level2});
    if (cat->val.shape[0] != align.in_channels)
        throw ConfigError("align conv expects " + std::to_string(align.in_channels) +
                          " channels, got " + std::to_string(cat->val.shape[0]));
    return feature_map(ag::conv2d(cat, align.w, align.b, 1, 0), f_fused.role);
}

FeatureMap attach_level3(const FeatureMap& f_scale, const PromptSet& p, int scale_index) {
    if (scale_index != 1 && scale_index != 2)
        throw ConfigError("attach_level3: scale_index must be 1 or 2");
    const ag::Value& prompt = scale_index == 1 ? p.level3a : p.level3b;
    if (!prompt) return f_scale;
    check_prompt_spatial(f_scale, prompt, scale_index == 1 ? "level3a" : "level3b");
    return feature_map(ag::concat_channels({f_scale.v, prompt}), f_scale.role);
}

namespace {
bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

bool is_stub_param(const std::string& n) {
    return starts_with(n, "foundation.image.") || starts_with(n, "foundation.point.");
}

bool is_prompt_param(const std::string& n) {
    return n.find("prompt") != std::string::npos;  // prompt.levelX and *.prompt.weight columns
}

bool is_pre_bev(const std::string& n) {
    return starts_with(n, "backbone.") || starts_with(n, "foundation.") ||
           starts_with(n, "to_bev.");
}

bool is_post_bev(const std::string& n) {
    return starts_with(n, "fusion.") || starts_with(n, "align.") ||
           starts_with(n, "bev_backbone.") || starts_with(n, "bev_fpn.") ||
           starts_with(n, "head.");
}
}  // namespace

TrainabilitySpec build_trainability(const ag::ParamStore& store, const ModelConfig& cfg,
                                    TrainabilityMode mode) {
    TrainabilitySpec spec;
    for (const auto& [name, _] : store.all()) {
        if (!is_pre_bev(name) && !is_post_bev(name) && !starts_with(name, "prompt."))
            throw std::logic_error("build_trainability: unknown parameter name " + name);
        bool trainable = false;
        switch (mode) {
            case TrainabilityMode::LidarOnly:
                trainable = is_post_bev(name) || starts_with(name, "to_bev.lidar") ||
                            starts_with(name, "to_bev.bias");
                if (is_prompt_param(name) || starts_with(name, "align.")) trainable = false;
                break;
            case TrainabilityMode::BranchesParallel:
            case TrainabilityMode::Joint:
                if (cfg.freeze_pre_bev) {
                    trainable = is_post_bev(name) || starts_with(name, "prompt.");
                } else {
                    trainable = !is_stub_param(name);
                }
                break;
        }
        if (trainable)
            spec.trainable_names.insert(name);
        else
            spec.frozen_names.insert(name);
    }
    return spec;
}

}  // namespace pfdet
