#pragma once

#include <array>
#include <optional>

#include "pfdet/config.hpp"
#include "pfdet/feature_map.hpp"
#include "pfdet/geometry.hpp"
#include "pfdet/prompts.hpp"

namespace pfdet {

// Everything downstream of the image pyramid: the BEV converter, the fusion
// encoder (four parallel convs + a fusing conv), the two-scale BEV backbone,
// the BEV pyramid, and the dense head.
//
// Inputs that only exist in some configurations (prompt channels, point
// foundation channels) are separate zero-initialized weight blocks, so
// loading baseline weights into a widened model reproduces baseline outputs.
struct BevStream {
    int channels = 0;       // C
    int img_feat_dim = 0;   // pooled image feature length
    int lidar_channels = 0;
    int point_channels = 0;  // 0 when the point branch is off

    ag::Value to_bev_img_w;    // [C, img_feat_dim]
    ag::Value to_bev_lidar_w;  // [C, lidar, 1, 1]
    ag::Value to_bev_point_w;  // [C, point, 1, 1] when enabled
    ag::Value to_bev_bias;     // [C]

    struct FusionBranch {
        int kernel = 1;
        ag::Value base_w;    // [C/4, C, k, k]
        ag::Value prompt_w;  // [C/4, Cp1, k, k] when level-1 prompts exist
        ag::Value bias;      // [C/4]
    };
    std::array<FusionBranch, 4> branches;  // kernels 1, 3, 5, 7
    ag::Value fuse_w, fuse_b;              // [C, C, 3, 3]

    ag::Value bb1_c1w, bb1_c1b, bb1_c2w, bb1_c2b;  // C   -> C/2, stride 1
    ag::Value bb2_c1w, bb2_c1b, bb2_c2w, bb2_c2b;  // C/2 -> C,   stride 2

    ag::Value fpn1_base_w, fpn1_prompt_w, fpn1_b;  // fine lateral
    ag::Value fpn2_base_w, fpn2_prompt_w, fpn2_b;  // coarse lateral

    ag::Value head_conv_w, head_conv_b;
    ag::Value head_heat_w, head_heat_b;
    ag::Value head_reg_w, head_reg_b;  // 6 ch: offx, offy, log sx, log sy, sin, cos
};

BevStream make_bev_stream(ag::ParamStore& store, const ModelConfig& cfg, uint64_t seed);

// F_BEV: broadcast linear projection of the pooled image features plus 1x1
// projections of the lidar planes and optional point-foundation channels.
FeatureMap to_bev(const BevStream& s, const std::vector<FeatureMap>& image_feats,
                  const FeatureMap& lidar_bev, const ag::Value& point_map /*nullable*/);

// Fusion encoder over C or C+Cp1 channels; output is C x H x W.
FeatureMap fuse_bev(const BevStream& s, const FeatureMap& f);

// Two scales: [C/2, H, W] and [C, H/2, W/2].
std::vector<FeatureMap> bev_backbone(const BevStream& s, const FeatureMap& f);

// Lateral + top-down merge at BEV scales; accepts prompt-widened inputs.
std::vector<FeatureMap> bev_fpn(const BevStream& s, const std::vector<FeatureMap>& feats);

struct HeadOutput {
    ag::Value heat_logits;  // [K, H, W]
    ag::Value reg;          // [6, H, W]
};

HeadOutput head_forward(const BevStream& s, const FeatureMap& finest);

// Per-class 3x3 local maxima above score_floor, decoded to boxes, then
// class-agnostic greedy rotated NMS.
std::vector<DetectionBox> decode_boxes(const Tensor& heat_prob, const Tensor& reg,
                                       const HeadConfig& cfg);

struct HeadTargets {
    Tensor heat;      // [K, H, W] in {0,1}
    Tensor pos_mask;  // [H, W]
    Tensor reg;       // [6, H, W]
};

HeadTargets build_head_targets(const std::vector<DetectionBox>& gt, int num_classes, int h, int w);

}  // namespace pfdet
