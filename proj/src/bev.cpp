#include "pfdet/bev.hpp"

#include <cmath>

namespace pfdet {

BevStream make_bev_stream(ag::ParamStore& store, const ModelConfig& cfg, uint64_t seed) {
    BevStream s;
    const int C = cfg.bev.channels;
    s.channels = C;
    s.img_feat_dim = cfg.image.fpn_channels * static_cast<int>(cfg.image.stage_channels.size());
    s.lidar_channels = cfg.bev.lidar_channels;
    s.point_channels = cfg.foundation.point_encoder != PointEncoderKind::None
                           ? cfg.foundation.point_compress_channels
                           : 0;
    const ag::InitSpec zero{ag::Init::Zeros, 0, 0, 0};

    // Zero-initialized like the other widened input blocks: switching the
    // camera stream on mid-protocol leaves F_BEV unchanged at step zero.
    s.to_bev_img_w = store.create("to_bev.img.weight", {C, s.img_feat_dim}, zero, seed);
    s.to_bev_lidar_w = store.create("to_bev.lidar.weight", {C, s.lidar_channels, 1, 1},
                                    {ag::Init::FanInUniform, 0, 0, s.lidar_channels}, seed);
    if (s.point_channels > 0)
        s.to_bev_point_w = store.create("to_bev.point.weight", {C, s.point_channels, 1, 1}, zero,
                                        seed);
    s.to_bev_bias = store.create("to_bev.bias", {C}, zero, seed);

    const int bc = cfg.fusion_branch_channels();
    const int kernels[4] = {1, 3, 5, 7};
    for (int i = 0; i < 4; ++i) {
        auto& br = s.branches[i];
        br.kernel = kernels[i];
        const std::string base = "fusion.branch" + std::to_string(i + 1);
        br.base_w = store.create(base + ".base.weight", {bc, C, br.kernel, br.kernel},
                                 {ag::Init::FanInUniform, 0, 0, C * br.kernel * br.kernel}, seed);
        if (cfg.prompts.level1_channels > 0)
            br.prompt_w = store.create(
                base + ".prompt.weight",
                {bc, cfg.prompts.level1_channels, br.kernel, br.kernel}, zero, seed);
        br.bias = store.create(base + ".bias", {bc}, zero, seed);
    }
    s.fuse_w = store.create("fusion.fuse.weight", {C, C, 3, 3},
                            {ag::Init::FanInUniform, 0, 0, C * 9}, seed);
    s.fuse_b = store.create("fusion.fuse.bias", {C}, zero, seed);

    const int Cf = cfg.bev_fine_channels();
    s.bb1_c1w = store.create("bev_backbone.block1.conv1.weight", {Cf, C, 3, 3},
                             {ag::Init::FanInUniform, 0, 0, C * 9}, seed);
    s.bb1_c1b = store.create("bev_backbone.block1.conv1.bias", {Cf}, zero, seed);
    s.bb1_c2w = store.create("bev_backbone.block1.conv2.weight", {Cf, Cf, 3, 3},
                             {ag::Init::FanInUniform, 0, 0, Cf * 9}, seed);
    s.bb1_c2b = store.create("bev_backbone.block1.conv2.bias", {Cf}, zero, seed);
    s.bb2_c1w = store.create("bev_backbone.block2.conv1.weight", {C, Cf, 3, 3},
                             {ag::Init::FanInUniform, 0, 0, Cf * 9}, seed);
    s.bb2_c1b = store.create("bev_backbone.block2.conv1.bias", {C}, zero, seed);
    s.bb2_c2w = store.create("bev_backbone.block2.conv2.weight", {C, C, 3, 3},
                             {ag::Init::FanInUniform, 0, 0, C * 9}, seed);
    s.bb2_c2b = store.create("bev_backbone.block2.conv2.bias", {C}, zero, seed);

    const int Cp = cfg.bev_fpn_channels();
    s.fpn1_base_w = store.create("bev_fpn.lateral1.base.weight", {Cp, Cf, 1, 1},
                                 {ag::Init::FanInUniform, 0, 0, Cf}, seed);
    if (cfg.prompts.level3a_channels > 0)
        s.fpn1_prompt_w = store.create("bev_fpn.lateral1.prompt.weight",
                                       {Cp, cfg.prompts.level3a_channels, 1, 1}, zero, seed);
    s.fpn1_b = store.create("bev_fpn.lateral1.bias", {Cp}, zero, seed);
    s.fpn2_base_w = store.create("bev_fpn.lateral2.base.weight", {Cp, C, 1, 1},
                                 {ag::Init::FanInUniform, 0, 0, C}, seed);
    if (cfg.prompts.level3b_channels > 0)
        s.fpn2_prompt_w = store.create("bev_fpn.lateral2.prompt.weight",
                                       {Cp, cfg.prompts.level3b_channels, 1, 1}, zero, seed);
    s.fpn2_b = store.create("bev_fpn.lateral2.bias", {Cp}, zero, seed);

    s.head_conv_w = store.create("head.conv.weight", {Cp, Cp, 3, 3},
                                 {ag::Init::FanInUniform, 0, 0, Cp * 9}, seed);
    s.head_conv_b = store.create("head.conv.bias", {Cp}, zero, seed);
    s.head_heat_w = store.create("head.heatmap.weight", {cfg.head.num_classes, Cp, 1, 1},
                                 {ag::Init::FanInUniform, 0, 0, Cp}, seed);
    // Low-prior bias: the untrained heatmap sits near zero probability, so
    // the focal term is dominated by the positives from step one.
    s.head_heat_b = store.create("head.heatmap.bias", {cfg.head.num_classes},
                                 {ag::Init::Uniform, -4.0, -4.0, 0}, seed);
    s.head_reg_w = store.create("head.reg.weight", {6, Cp, 1, 1},
                                {ag::Init::FanInUniform, 0, 0, Cp}, seed);
    s.head_reg_b = store.create("head.reg.bias", {6}, zero, seed);
    return s;
}

FeatureMap to_bev(const BevStream& s, const std::vector<FeatureMap>& image_feats,
                  const FeatureMap& lidar_bev, const ag::Value& point_map) {
    if (lidar_bev.role != GridRole::Bev)
        throw DimensionError("to_bev: lidar input must carry the BEV role");
    if (lidar_bev.channels() != s.lidar_channels)
        throw DimensionError("to_bev: expected " + std::to_string(s.lidar_channels) +
                             " lidar channels, got " + std::to_string(lidar_bev.channels()));
    const int h = lidar_bev.height(), w = lidar_bev.width();

    // Pooled multi-scale image features, scattered uniformly onto the grid.
    std::vector<ag::Value> pooled;
    for (const auto& m : image_feats) pooled.push_back(ag::mean_hw(m.v));
    ag::Value img_vec;
    if (pooled.empty()) {
        img_vec = ag::make_const(Tensor({s.img_feat_dim}));
    } else {
        std::vector<ag::Value> parts;
        parts.reserve(pooled.size());
        for (auto& p : pooled) parts.push_back(ag::broadcast_hw(p, 1, 1));
        img_vec = ag::mean_hw(ag::concat_channels(parts));
    }
    if (img_vec->val.shape[0] != s.img_feat_dim)
        throw DimensionError("to_bev: pooled image features have length " +
                             std::to_string(img_vec->val.shape[0]) + ", expected " +
                             std::to_string(s.img_feat_dim));

    auto img_term = ag::broadcast_hw(ag::linear(img_vec, s.to_bev_img_w, nullptr), h, w);
    auto lid_term = ag::conv2d(lidar_bev.v, s.to_bev_lidar_w, s.to_bev_bias, 1, 0);
    auto out = ag::add(img_term, lid_term);
    if (point_map) {
        if (!s.to_bev_point_w)
            throw ConfigError("to_bev: point features supplied but the point block is off");
        if (point_map->val.shape[1] != h || point_map->val.shape[2] != w)
            throw DimensionError("to_bev: point map grid mismatch");
        out = ag::add(out, ag::conv2d(point_map, s.to_bev_point_w, nullptr, 1, 0));
    }
    return feature_map(out, GridRole::Bev);
}

FeatureMap fuse_bev(const BevStream& s, const FeatureMap& f) {
    const int C = s.channels;
    const int cin = f.channels();
    const bool prompted = cin > C;
    if (cin != C && !(prompted && s.branches[0].prompt_w &&
                      cin == C + s.branches[0].prompt_w->val.shape[1]))
        throw DimensionError("fuse_bev: expected " + std::to_string(C) + " (+prompt) channels, got " +
                             std::to_string(cin));
    ag::Value base = prompted ? ag::slice_channels(f.v, 0, C) : f.v;
    ag::Value prompt = prompted ? ag::slice_channels(f.v, C, cin) : nullptr;
    std::vector<ag::Value> branch_outs;
    for (const auto& br : s.branches) {
        const int pad = (br.kernel - 1) / 2;
        auto y = ag::conv2d(base, br.base_w, br.bias, 1, pad);
        if (prompt) y = ag::add(y, ag::conv2d(prompt, br.prompt_w, nullptr, 1, pad));
        branch_outs.push_back(y);
    }
    auto cat = ag::relu(ag::concat_channels(branch_outs));
    return feature_map(ag::conv2d(cat, s.fuse_w, s.fuse_b, 1, 1), GridRole::Bev);
}

std::vector<FeatureMap> bev_backbone(const BevStream& s, const FeatureMap& f) {
    if (f.channels() != s.channels)
        throw DimensionError("bev_backbone: expected " + std::to_string(s.channels) +
                             " channels, got " + std::to_string(f.channels()));
    if (f.height() % 2 != 0 || f.width() % 2 != 0)
        throw ConfigError("bev_backbone: grid must be even to downsample, got " +
                          f.v->val.shape_str());
    auto fine = ag::relu(ag::conv2d(f.v, s.bb1_c1w, s.bb1_c1b, 1, 1));
    fine = ag::relu(ag::conv2d(fine, s.bb1_c2w, s.bb1_c2b, 1, 1));
    auto coarse = ag::relu(ag::conv2d(fine, s.bb2_c1w, s.bb2_c1b, 2, 1));
    coarse = ag::relu(ag::conv2d(coarse, s.bb2_c2w, s.bb2_c2b, 1, 1));
    return {feature_map(fine, GridRole::Bev), feature_map(coarse, GridRole::Bev)};
}

std::vector<FeatureMap> bev_fpn(const BevStream& s, const std::vector<FeatureMap>& feats) {
    if (feats.size() != 2) throw DimensionError("bev_fpn: expected two scales");
    auto lateral = [](const FeatureMap& f, const ag::Value& base_w, const ag::Value& prompt_w,
                      const ag::Value& b) {
        const int base_in = base_w->val.shape[1];
        if (f.channels() == base_in) return ag::conv2d(f.v, base_w, b, 1, 0);
        if (!prompt_w || f.channels() != base_in + prompt_w->val.shape[1])
            throw DimensionError("bev_fpn: lateral input has " + std::to_string(f.channels()) +
                                 " channels, expected " + std::to_string(base_in) + " (+prompt)");
        auto y = ag::conv2d(ag::slice_channels(f.v, 0, base_in), base_w, b, 1, 0);
        return ag::add(y, ag::conv2d(ag::slice_channels(f.v, base_in, f.channels()), prompt_w,
                                     nullptr, 1, 0));
    };
    auto out_coarse = lateral(feats[1], s.fpn2_base_w, s.fpn2_prompt_w, s.fpn2_b);
    auto out_fine =
        ag::add(lateral(feats[0], s.fpn1_base_w, s.fpn1_prompt_w, s.fpn1_b),
                ag::nearest_up2(out_coarse));
    return {feature_map(out_fine, GridRole::MsBev), feature_map(out_coarse, GridRole::MsBev)};
}

HeadOutput head_forward(const BevStream& s, const FeatureMap& finest) {
    if (finest.role != GridRole::MsBev)
        throw DimensionError("head: expected multi-scale BEV features");
    auto h = ag::relu(ag::conv2d(finest.v, s.head_conv_w, s.head_conv_b, 1, 1));
    HeadOutput out;
    out.heat_logits = ag::conv2d(h, s.head_heat_w, s.head_heat_b, 1, 0);
    out.reg = ag::conv2d(h, s.head_reg_w, s.head_reg_b, 1, 0);
    return out;
}

std::vector<DetectionBox> decode_boxes(const Tensor& heat_prob, const Tensor& reg,
                                       const HeadConfig& cfg) {
    const int K = heat_prob.shape[0], H = heat_prob.shape[1], W = heat_prob.shape[2];
    std::vector<DetectionBox> candidates;
    for (int k = 0; k < K; ++k)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double p = heat_prob.at(k, r, c);
                if (p < cfg.score_floor) continue;
                bool is_peak = true;
                for (int dr = -1; dr <= 1 && is_peak; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= H || cc < 0 || cc >= W || (dr == 0 && dc == 0))
                            continue;
                        if (heat_prob.at(k, rr, cc) > p) {
                            is_peak = false;
                            break;
                        }
                    }
                if (!is_peak) continue;
                DetectionBox b;
                b.class_id = k;
                b.center_x = c + 0.5 + reg.at(0, r, c);
                b.center_y = r + 0.5 + reg.at(1, r, c);
                b.size_x = std::exp(reg.at(2, r, c));
                b.size_y = std::exp(reg.at(3, r, c));
                b.yaw = std::atan2(reg.at(4, r, c), reg.at(5, r, c));
                b.score = p;
                candidates.push_back(b);
            }
    auto keep = nms(candidates, cfg.nms_iou);
    std::vector<DetectionBox> out;
    for (size_t i : keep) {
        out.push_back(candidates[i]);
        if (static_cast<int>(out.size()) >= cfg.max_boxes) break;
    }
    return out;
}

HeadTargets build_head_targets(const std::vector<DetectionBox>& gt, int num_classes, int h,
                               int w) {
    HeadTargets t;
    t.heat = Tensor({num_classes, h, w});
    t.pos_mask = Tensor({h, w});
    t.reg = Tensor({6, h, w});
    for (const auto& box : gt) {
        const int c = std::clamp(static_cast<int>(box.center_x), 0, w - 1);
        const int r = std::clamp(static_cast<int>(box.center_y), 0, h - 1);
        if (t.heat.at(box.class_id, r, c) > 0.5) continue;  // cell taken
        // The whole 3x3 disc is positive and regression-supervised with
        // per-cell offsets, so any cell that peaks decodes the same box.
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                t.pos_mask.data[static_cast<size_t>(rr) * w + cc] = 1.0;
                t.reg.at(0, rr, cc) = box.center_x - (cc + 0.5);
                t.reg.at(1, rr, cc) = box.center_y - (rr + 0.5);
                t.reg.at(2, rr, cc) = std::log(box.size_x);
                t.reg.at(3, rr, cc) = std::log(box.size_y);
                t.reg.at(4, rr, cc) = std::sin(box.yaw);
                t.reg.at(5, rr, cc) = std::cos(box.yaw);
                t.heat.at(box.class_id, rr, cc) = 1.0;
            }
    }
    return t;
}

}  // namespace pfdet
