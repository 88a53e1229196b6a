#pragma once

#include <string>
#include <vector>

#include "pfdet/config.hpp"
#include "pfdet/feature_map.hpp"

namespace pfdet {

// One residual stage: x -> L(x) + W x, where L is conv3x3(stride) -> relu ->
// conv3x3 and W is a strided 1x1 projection. The projection is always
// learned, also where dims match.
struct StageParams {
    int stage_index = 1;  // unique within a backbone, 1-based
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    ag::Value conv1_w, conv1_b, conv2_w, conv2_b;  // layer weights L_i
    ag::Value proj_w, proj_b;                      // residual projection W_i
    bool trainable = true;
};

struct BackboneOutput {
    std::vector<FeatureMap> maps;  // strictly decreasing spatial resolution
};

StageParams make_stage(ag::ParamStore& store, const std::string& prefix, int stage_index,
                       int in_channels, int out_channels, int stride, uint64_t seed);

// The layer path L_i(x) alone and the projection path W_i x alone; their sum
// is the stage output.
ag::Value stage_layer_path(const FeatureMap& x, const StageParams& p);
ag::Value stage_projection_path(const FeatureMap& x, const StageParams& p);

FeatureMap residual_stage(const FeatureMap& x, const StageParams& p);

BackboneOutput run_backbone(const FeatureMap& image, const std::vector<StageParams>& stages);

// Top-down pyramid merge with 1x1 laterals and nearest-neighbor x2
// upsampling; every output has `out_channels` channels. Extra input channels
// on the last level (the foundation-vector block) live in a separate
// zero-initialized weight so baseline checkpoints stay loadable.
struct FpnMerge {
    std::vector<ag::Value> lateral_w, lateral_b;
    ag::Value last_extra_w;  // [out, extra, 1, 1] when extra_channels > 0
    std::vector<int> in_channels;
    int extra_channels = 0;
    int out_channels = 0;
};

FpnMerge make_fpn(ag::ParamStore& store, const std::string& prefix,
                  const std::vector<int>& in_channels, int extra_channels, int out_channels,
                  uint64_t seed);

std::vector<FeatureMap> fpn_merge(const FpnMerge& fpn, const std::vector<FeatureMap>& maps);

// Output spatial dims per stage implied by input dims and strides alone.
std::vector<std::pair<int, int>> backbone_shape_law(int h, int w, const std::vector<int>& strides);

}  // namespace pfdet
