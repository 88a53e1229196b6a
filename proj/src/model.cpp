#include "pfdet/model.hpp"

#include <cmath>

namespace pfdet {

std::unique_ptr<AssembledModel> assemble_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    auto model = std::make_unique<AssembledModel>();
    model->cfg = cfg;
    model->seed = seed;
    model->config_hash = cfg.config_hash();

    int cin = cfg.image.in_channels;
    for (size_t i = 0; i < cfg.image.stage_channels.size(); ++i) {
        model->stages.push_back(make_stage(model->store,
                                           "backbone.stage" + std::to_string(i + 1),
                                           static_cast<int>(i + 1), cin,
                                           cfg.image.stage_channels[i],
                                           cfg.image.stage_strides[i], seed));
        cin = cfg.image.stage_channels[i];
    }

    model->foundation = make_foundation_branch(model->store, cfg.foundation,
                                               cfg.bev.lidar_channels, cfg.bev.height,
                                               cfg.bev.width, seed);

    // The image foundation vector concatenates onto the last backbone map
    // before the pyramid; its lateral block is a separate set of columns.
    model->fpn = make_fpn(model->store, "backbone.fpn", cfg.image.stage_channels,
                          image_encoder_dim(cfg.foundation.image_encoder),
                          cfg.image.fpn_channels, seed);

    model->prompts = init_prompts(model->store, cfg, seed);
    if (cfg.prompts.level2_channels > 0)
        model->align =
            make_align(model->store, cfg.bev.channels, cfg.prompts.level2_channels, seed);

    model->bev = make_bev_stream(model->store, cfg, seed);
    return model;
}

ModelConfig derive_stage1_config(const ModelConfig& cfg) {
    ModelConfig s1 = cfg;
    s1.mode = "stage1";
    s1.foundation.image_encoder = ImageEncoderKind::None;
    s1.foundation.point_encoder = PointEncoderKind::None;
    s1.prompts = PromptConfig{};
    s1.freeze_pre_bev = false;
    return s1;
}

ForwardResult forward_full(AssembledModel& model, const SceneSample& sample,
                           const ForwardOptions& opts) {
    const ModelConfig& cfg = model.cfg;
    std::optional<ag::NoGradGuard> no_grad;
    if (!opts.training) no_grad.emplace();

    require_shape(sample.camera, {cfg.image.in_channels, cfg.image.height, cfg.image.width},
                  "forward: camera");
    require_shape(sample.lidar_bev, {cfg.bev.lidar_channels, cfg.bev.height, cfg.bev.width},
                  "forward: lidar");

    ForwardResult result;
    const char* stage_name = "backbone";
    try {
        std::vector<FeatureMap> image_feats;
        if (!opts.lidar_only) {
            auto image = feature_map(ag::make_const(sample.camera), GridRole::ImageScale);
            auto bb = run_backbone(image, model.stages);

            stage_name = "foundation";
            if (cfg.foundation.image_encoder != ImageEncoderKind::None) {
                auto fv = encode_image_cached(model.foundation, sample.camera, sample.sample_id);
                auto& last = bb.maps.back();
                auto vmap = broadcast_vector(fv, last.height(), last.width());
                bb.maps.back() = concat_foundation(last, vmap);
            }

            stage_name = "fpn";
            image_feats = fpn_merge(model.fpn, bb.maps);
        }

        stage_name = "point_foundation";
        ag::Value point_map;
        if (!opts.lidar_only && cfg.foundation.point_encoder != PointEncoderKind::None) {
            auto pv = encode_point_cached(model.foundation, sample.lidar_bev, sample.sample_id);
            auto compressed = compress_channels(model.foundation, pv);
            point_map = upsample_point_features(model.foundation, compressed,
                                                cfg.foundation.point_upsample_mode,
                                                cfg.bev.height, cfg.bev.width);
        }

        stage_name = "to_bev";
        auto lidar = feature_map(ag::make_const(sample.lidar_bev), GridRole::Bev);
        auto f_bev = to_bev(model.bev, image_feats, lidar, point_map);

        stage_name = "attach_level1";
        auto prompted = attach_level1(f_bev, model.prompts);
        result.ledger.post_level1 = prompted.channels();

        stage_name = "fuse_bev";
        auto fused = fuse_bev(model.bev, prompted);
        result.ledger.post_fuse = fused.channels();

        stage_name = "attach_level2";
        FeatureMap aligned = fused;
        if (model.prompts.level2) {
            auto cat = feature_map(ag::concat_channels({fused.v, model.prompts.level2}),
                                   fused.role);
            result.ledger.post_level2_concat = cat.channels();
            aligned = feature_map(ag::conv2d(cat.v, model.align.w, model.align.b, 1, 0),
                                  fused.role);
        } else {
            result.ledger.post_level2_concat = fused.channels();
        }
        result.ledger.post_align = aligned.channels();

        stage_name = "bev_backbone";
        auto scales = bev_backbone(model.bev, aligned);

        stage_name = "attach_level3";
        scales[0] = attach_level3(scales[0], model.prompts, 1);
        scales[1] = attach_level3(scales[1], model.prompts, 2);
        result.ledger.level3_fine = {scales[0].channels(), scales[0].height(),
                                     scales[0].width()};
        result.ledger.level3_coarse = {scales[1].channels(), scales[1].height(),
                                       scales[1].width()};

        stage_name = "bev_fpn";
        auto msb = bev_fpn(model.bev, scales);

        stage_name = "head";
        auto head = head_forward(model.bev, msb[0]);

        if (opts.training) {
            stage_name = "loss";
            auto targets = build_head_targets(sample.boxes, cfg.head.num_classes,
                                              cfg.bev.height, cfg.bev.width);
            result.loss = ag::detection_loss(head.heat_logits, head.reg, targets.heat,
                                             targets.pos_mask, targets.reg,
                                             cfg.head.focal_alpha, cfg.head.focal_gamma,
                                             cfg.head.reg_weight);
            result.loss_value = result.loss->val.data[0];
            if (!std::isfinite(result.loss_value))
                throw std::runtime_error("non-finite loss");
        } else {
            result.heat_logits = head.heat_logits->val;
            result.reg = head.reg->val;
            if (opts.decode) {
                stage_name = "decode";
                Tensor prob = head.heat_logits->val;
                for (auto& v : prob.data) v = 1.0 / (1.0 + std::exp(-v));
                result.boxes = decode_boxes(prob, head.reg->val, cfg.head);
            }
        }
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("forward_full[") + stage_name + "]: " + e.what());
    }
    return result;
}

}  // namespace pfdet
