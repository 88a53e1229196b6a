#include "pfdet/backbone.hpp"

namespace pfdet {

namespace ag = pfdet::ag;

StageParams make_stage(ag::ParamStore& store, const std::string& prefix, int stage_index,
                       int in_channels, int out_channels, int stride, uint64_t seed) {
    StageParams p;
    p.stage_index = stage_index;
    p.in_channels = in_channels;
    p.out_channels = out_channels;
    p.stride = stride;
    ag::InitSpec w1{ag::Init::FanInUniform, 0, 0, in_channels * 9};
    ag::InitSpec w2{ag::Init::FanInUniform, 0, 0, out_channels * 9};
    ag::InitSpec wp{ag::Init::FanInUniform, 0, 0, in_channels};
    ag::InitSpec zero{ag::Init::Zeros, 0, 0, 0};
    p.conv1_w = store.create(prefix + ".conv1.weight", {out_channels, in_channels, 3, 3}, w1, seed);
    p.conv1_b = store.create(prefix + ".conv1.bias", {out_channels}, zero, seed);
    p.conv2_w = store.create(prefix + ".conv2.weight", {out_channels, out_channels, 3, 3}, w2, seed);
    p.conv2_b = store.create(prefix + ".conv2.bias", {out_channels}, zero, seed);
    p.proj_w = store.create(prefix + ".proj.weight", {out_channels, in_channels, 1, 1}, wp, seed);
    p.proj_b = store.create(prefix + ".proj.bias", {out_channels}, zero, seed);
    return p;
}

namespace {
void check_stage_input(const FeatureMap& x, const StageParams& p) {
    if (x.channels() != p.in_channels)
        throw DimensionError("residual_stage " + std::to_string(p.stage_index) +
                             ": expected " + std::to_string(p.in_channels) +
                             " input channels, got " + std::to_string(x.channels()));
    if (x.height() % p.stride != 0 || x.width() % p.stride != 0)
        throw DimensionError("residual_stage " + std::to_string(p.stage_index) +
                             ": input dims must be divisible by stride " +
                             std::to_string(p.stride));
}
}  // namespace

ag::Value stage_layer_path(const FeatureMap& x, const StageParams& p) {
    check_stage_input(x, p);
    auto h = ag::conv2d(x.v, p.conv1_w, p.conv1_b, p.stride, 1);
    h = ag::relu(h);
    return ag::conv2d(h, p.conv2_w, p.conv2_b, 1, 1);
}

ag::Value stage_projection_path(const FeatureMap& x, const StageParams& p) {
    check_stage_input(x, p);
    return ag::conv2d(x.v, p.proj_w, p.proj_b, p.stride, 0);
}

FeatureMap residual_stage(const FeatureMap& x, const StageParams& p) {
    auto out = ag::add(stage_layer_path(x, p), stage_projection_path(x, p));
    return feature_map(out, GridRole::ImageScale);
}

BackboneOutput run_backbone(const FeatureMap& image, const std::vector<StageParams>& stages) {
    if (stages.empty()) throw ConfigError("run_backbone: no stages");
    BackboneOutput out;
    FeatureMap cur = image;
    for (size_t i = 0; i < stages.size(); ++i) {
        if (cur.channels() != stages[i].in_channels)
            throw DimensionError("run_backbone: inconsistent chain at stage " +
                                 std::to_string(stages[i].stage_index) + ": expected " +
                                 std::to_string(stages[i].in_channels) + " channels, got " +
                                 std::to_string(cur.channels()));
        cur = residual_stage(cur, stages[i]);
        out.maps.push_back(cur);
    }
    return out;
}

FpnMerge make_fpn(ag::ParamStore& store, const std::string& prefix,
                  const std::vector<int>& in_channels, int extra_channels, int out_channels,
                  uint64_t seed) {
    FpnMerge fpn;
    fpn.in_channels = in_channels;
    fpn.extra_channels = extra_channels;
    fpn.out_channels = out_channels;
    ag::InitSpec zero{ag::Init::Zeros, 0, 0, 0};
    for (size_t i = 0; i < in_channels.size(); ++i) {
        ag::InitSpec w{ag::Init::FanInUniform, 0, 0, in_channels[i]};
        fpn.lateral_w.push_back(store.create(prefix + ".lateral" + std::to_string(i + 1) +
                                                 ".weight",
                                             {out_channels, in_channels[i], 1, 1}, w, seed));
        fpn.lateral_b.push_back(store.create(prefix + ".lateral" + std::to_string(i + 1) +
                                                 ".bias",
                                             {out_channels}, zero, seed));
    }
    if (extra_channels > 0)
        fpn.last_extra_w = store.create(prefix + ".lateral" + std::to_string(in_channels.size()) +
                                            ".fm.weight",
                                        {out_channels, extra_channels, 1, 1}, zero, seed);
    return fpn;
}

std::vector<FeatureMap> fpn_merge(const FpnMerge& fpn, const std::vector<FeatureMap>& maps) {
    if (maps.size() != fpn.in_channels.size())
        throw DimensionError("fpn_merge: expected " + std::to_string(fpn.in_channels.size()) +
                             " maps, got " + std::to_string(maps.size()));
    std::vector<ag::Value> laterals;
    for (size_t i = 0; i < maps.size(); ++i) {
        const int base_in = fpn.in_channels[i];
        if (maps[i].channels() == base_in) {
            laterals.push_back(ag::conv2d(maps[i].v, fpn.lateral_w[i], fpn.lateral_b[i], 1, 0));
        } else if (i + 1 == maps.size() && fpn.last_extra_w &&
                   maps[i].channels() == base_in + fpn.extra_channels) {
            auto base = ag::conv2d(ag::slice_channels(maps[i].v, 0, base_in), fpn.lateral_w[i],
                                   fpn.lateral_b[i], 1, 0);
            auto extra = ag::conv2d(ag::slice_channels(maps[i].v, base_in, maps[i].channels()),
                                    fpn.last_extra_w, nullptr, 1, 0);
            laterals.push_back(ag::add(base, extra));
        } else {
            throw DimensionError("fpn_merge: level " + std::to_string(i + 1) + " has " +
                                 std::to_string(maps[i].channels()) + " channels, expected " +
                                 std::to_string(base_in));
        }
    }
    std::vector<ag::Value> outs(maps.size());
    outs.back() = laterals.back();
    for (int i = static_cast<int>(maps.size()) - 2; i >= 0; --i) {
        outs[i] = ag::add(laterals[i], ag::nearest_up2(outs[i + 1]));
    }
    std::vector<FeatureMap> result;
    for (auto& o : outs) result.push_back(feature_map(o, maps[0].role));
    return result;
}

std::vector<std::pair<int, int>> backbone_shape_law(int h, int w,
                                                    const std::vector<int>& strides) {
    std::vector<std::pair<int, int>> dims;
    for (int s : strides) {
        h /= s;
        w /= s;
        dims.emplace_back(h, w);
    }
    return dims;
}

}  // namespace pfdet
