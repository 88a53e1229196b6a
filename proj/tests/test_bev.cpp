#include "doctest.h"

#include <cmath>
#include <random>

#include "pfdet/model.hpp"
#include "testing.hpp"

using namespace pfdet;
using namespace pftest;
namespace ag = pfdet::ag;

namespace {

ModelConfig tiny_config(RunMode mode) { return tiny_model_config(mode); }
SceneSpec tiny_spec() { return tiny_scene_spec(); }

FeatureMap random_bev(std::vector<int> shape, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return feature_map(ag::make_const(random_tensor(std::move(shape), rng)), GridRole::Bev);
}

}  // namespace

TEST_SUITE_BEGIN("bev");

TEST_CASE("to_bev produces C x H x W and zero image features leave lidar only") {
    ag::ParamStore store;
    ModelConfig cfg = desk_model_config(RunMode::Baseline);
    auto s = make_bev_stream(store, cfg, 7);
    auto lidar = random_bev({2, 36, 36}, 5);

    auto f1 = to_bev(s, {}, lidar, nullptr);
    CHECK(f1.v->val.shape == std::vector<int>{64, 36, 36});
    CHECK(f1.role == GridRole::Bev);

    // explicit zero feature maps match the empty-input path exactly
    std::vector<FeatureMap> zeros;
    for (int i = 0; i < 4; ++i)
        zeros.push_back(
            feature_map(ag::make_const(Tensor({cfg.image.fpn_channels, 4, 4})),
                        GridRole::ImageScale));
    auto f2 = to_bev(s, zeros, lidar, nullptr);
    CHECK(f1.v->val.data == f2.v->val.data);

    // and equal the plain lidar projection (zero bias at init)
    Tensor ref = naive_conv2d(lidar.v->val, s.to_bev_lidar_w->val, nullptr, 1, 0);
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(rel_err(f1.v->val.data[i], ref.data[i], 1e-12) < 1e-9);

    auto wrong = feature_map(ag::make_const(Tensor({3, 36, 36})), GridRole::Bev);
    CHECK_THROWS_AS(to_bev(s, {}, wrong, nullptr), DimensionError);
}

TEST_CASE("fuse_bev matches a straight-line re-evaluation of the branch graph") {
    ag::ParamStore store;
    ModelConfig cfg = tiny_config(RunMode::Baseline);
    cfg.bev.channels = 4;
    cfg.bev.height = cfg.bev.width = 4;
    cfg.prompts.level1_channels = 2;
    auto s = make_bev_stream(store, cfg, 3);
    // prompt columns are zero-initialized; randomize them so the oracle sees
    // a nontrivial two-block computation
    std::mt19937_64 rng(31);
    for (auto& br : s.branches)
        for (auto& v : br.prompt_w->val.data)
            v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);

    auto f = random_bev({6, 4, 4}, 77);  // 4 base + 2 prompt channels
    auto out = fuse_bev(s, f);
    CHECK(out.v->val.shape == std::vector<int>{4, 4, 4});

    // independent composition
    Tensor base({4, 4, 4}), prompt({2, 4, 4});
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) base.at(c, r, col) = f.v->val.at(c, r, col);
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) prompt.at(c, r, col) = f.v->val.at(4 + c, r, col);
    std::vector<Tensor> ys;
    for (const auto& br : s.branches) {
        const int pad = (br.kernel - 1) / 2;
        Tensor y = naive_conv2d(base, br.base_w->val, &br.bias->val, 1, pad);
        Tensor yp = naive_conv2d(prompt, br.prompt_w->val, nullptr, 1, pad);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += yp.data[i];
        ys.push_back(y);
    }
    Tensor cat({4, 4, 4});
    for (int b = 0; b < 4; ++b)
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col)
                cat.at(b, r, col) = std::max(0.0, ys[b].at(0, r, col));
    Tensor ref = naive_conv2d(cat, s.fuse_w->val, &s.fuse_b->val, 1, 1);
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(rel_err(out.v->val.data[i], ref.data[i], 1e-9) < 1e-6);
}

TEST_CASE("fuse_bev: zero input with zero biases gives zero output") {
    ag::ParamStore store;
    ModelConfig cfg = tiny_config(RunMode::Baseline);
    auto s = make_bev_stream(store, cfg, 3);
    auto f = feature_map(ag::make_const(Tensor({8, 12, 12})), GridRole::Bev);
    auto out = fuse_bev(s, f);
    for (double v : out.v->val.data) CHECK(v == 0.0);
}

TEST_CASE("fuse_bev rejects wrong channel counts") {
    ag::ParamStore store;
    auto s = make_bev_stream(store, tiny_config(RunMode::Baseline), 3);
    CHECK_THROWS_AS(fuse_bev(s, random_bev({5, 12, 12}, 4)), DimensionError);
}

TEST_CASE("bev_backbone: two scales with the C/2 and C channel law") {
    ag::ParamStore store;
    ModelConfig cfg = desk_model_config(RunMode::Baseline);
    auto s = make_bev_stream(store, cfg, 9);
    auto f = random_bev({64, 36, 36}, 6);
    auto scales = bev_backbone(s, f);
    REQUIRE(scales.size() == 2);
    CHECK(scales[0].v->val.shape == std::vector<int>{32, 36, 36});
    CHECK(scales[1].v->val.shape == std::vector<int>{64, 18, 18});

    auto zero = feature_map(ag::make_const(Tensor({64, 36, 36})), GridRole::Bev);
    auto zs = bev_backbone(s, zero);
    for (const auto& m : zs)
        for (double v : m.v->val.data) CHECK(v == 0.0);
}

TEST_CASE("bev_backbone requires an even grid") {
    ag::ParamStore store;
    ModelConfig cfg = tiny_config(RunMode::Baseline);
    auto s = make_bev_stream(store, cfg, 9);
    CHECK_THROWS_AS(bev_backbone(s, random_bev({8, 11, 11}, 6)), ConfigError);
}

TEST_CASE("bev_fpn merges scales like the image pyramid") {
    ag::ParamStore store;
    ModelConfig cfg = tiny_config(RunMode::Baseline);
    auto s = make_bev_stream(store, cfg, 9);
    auto fine = random_bev({4, 12, 12}, 61);
    auto coarse = random_bev({8, 6, 6}, 62);
    auto outs = bev_fpn(s, {fine, coarse});
    REQUIRE(outs.size() == 2);
    CHECK(outs[0].v->val.shape == std::vector<int>{4, 12, 12});
    CHECK(outs[1].v->val.shape == std::vector<int>{4, 6, 6});
    CHECK(outs[0].role == GridRole::MsBev);

    Tensor lat_f = naive_conv2d(fine.v->val, s.fpn1_base_w->val, &s.fpn1_b->val, 1, 0);
    Tensor lat_c = naive_conv2d(coarse.v->val, s.fpn2_base_w->val, &s.fpn2_b->val, 1, 0);
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 12; ++r)
            for (int col = 0; col < 12; ++col) {
                const double expect = lat_f.at(c, r, col) + lat_c.at(c, r / 2, col / 2);
                CHECK(rel_err(outs[0].v->val.at(c, r, col), expect, 1e-9) < 1e-9);
            }
}

TEST_CASE("head decode: single sharp peak becomes one centered box") {
    HeadConfig cfg;
    cfg.num_classes = 1;
    Tensor heat({1, 12, 12});
    Tensor reg({6, 12, 12});
    heat.at(0, 5, 5) = 0.9;
    reg.at(2, 5, 5) = std::log(2.0);
    reg.at(3, 5, 5) = std::log(2.0);
    reg.at(5, 5, 5) = 1.0;  // cos
    auto boxes = decode_boxes(heat, reg, cfg);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].center_x == doctest::Approx(5.5));
    CHECK(boxes[0].center_y == doctest::Approx(5.5));
    CHECK(boxes[0].size_x == doctest::Approx(2.0));
    CHECK(boxes[0].size_y == doctest::Approx(2.0));
    CHECK(boxes[0].yaw == doctest::Approx(0.0));
    CHECK(boxes[0].score == doctest::Approx(0.9));
}

TEST_CASE("head decode: zero heatmap yields no boxes") {
    HeadConfig cfg;
    cfg.num_classes = 3;
    Tensor heat({3, 8, 8});
    Tensor reg({6, 8, 8});
    CHECK(decode_boxes(heat, reg, cfg).empty());
}

TEST_CASE("head decode: overlapping lower-score peak is suppressed") {
    HeadConfig cfg;
    cfg.num_classes = 1;
    Tensor heat({1, 12, 12});
    Tensor reg({6, 12, 12});
    heat.at(0, 5, 3) = 0.9;
    heat.at(0, 5, 6) = 0.7;
    for (auto rc : {std::pair{5, 3}, std::pair{5, 6}}) {
        reg.at(2, rc.first, rc.second) = std::log(12.0);
        reg.at(3, rc.first, rc.second) = std::log(12.0);
        reg.at(5, rc.first, rc.second) = 1.0;
    }
    DetectionBox a{0, 3.5, 5.5, 12.0, 12.0, 0.0, 0.9};
    DetectionBox b{0, 6.5, 5.5, 12.0, 12.0, 0.0, 0.7};
    REQUIRE(rotated_iou(a, b) > 0.5);  // brute-force pairwise premise
    auto boxes = decode_boxes(heat, reg, cfg);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].score == doctest::Approx(0.9));
}

TEST_CASE("forward_full: disabled modules reproduce the baseline bitwise") {
    SceneSpec spec = tiny_spec();
    auto sample = generate_scene(spec, Split::Train, 0);

    auto baseline = assemble_model(tiny_config(RunMode::Baseline), 7);
    ModelConfig disabled = tiny_config(RunMode::Baseline);
    disabled.mode = "pf3det";  // same wiring, different label
    auto other = assemble_model(disabled, 7);
    CHECK(baseline->config_hash != other->config_hash);

    ForwardOptions opts;
    opts.training = true;
    auto a = forward_full(*baseline, sample, opts);
    auto b = forward_full(*other, sample, opts);
    CHECK(a.loss_value == b.loss_value);

    ForwardOptions eval;
    auto ba = forward_full(*baseline, sample, eval).boxes;
    auto bb = forward_full(*other, sample, eval).boxes;
    REQUIRE(ba.size() == bb.size());
    for (size_t i = 0; i < ba.size(); ++i) {
        CHECK(ba[i].score == bb[i].score);
        CHECK(ba[i].center_x == bb[i].center_x);
    }
}

TEST_CASE("forward_full: shape ledger on a prompted tiny model") {
    SceneSpec spec = tiny_spec();
    auto sample = generate_scene(spec, Split::Train, 1);
    ModelConfig cfg = tiny_config(RunMode::Pf3det);
    cfg.foundation.image_encoder = ImageEncoderKind::None;  // keep it cheap
    cfg.prompts.level3a_channels = 2;
    cfg.prompts.level3b_channels = 3;
    auto model = assemble_model(cfg, 7);
    ForwardOptions opts;
    auto res = forward_full(*model, sample, opts);
    CHECK(res.ledger.post_level1 == 8 + 2);
    CHECK(res.ledger.post_fuse == 8);
    CHECK(res.ledger.post_level2_concat == 8 + 3);
    CHECK(res.ledger.post_align == 8);
    CHECK(res.ledger.level3_fine == std::array<int, 3>{4 + 2, 12, 12});
    CHECK(res.ledger.level3_coarse == std::array<int, 3>{8 + 3, 6, 6});
}

TEST_CASE("forward_full: loss gradient w.r.t. the level-1 prompt matches finite differences") {
    SceneSpec spec = tiny_spec();
    auto sample = generate_scene(spec, Split::Train, 2);
    ModelConfig cfg = tiny_config(RunMode::PromptOnly);
    auto model = assemble_model(cfg, 7);
    ForwardOptions opts;
    opts.training = true;

    auto prompt = model->store.get("prompt.level1");
    model->store.zero_grads();
    auto res = forward_full(*model, sample, opts);
    ag::backward(res.loss);
    auto eval = [&] { return forward_full(*model, sample, opts).loss_value; };
    std::mt19937_64 pick(5);
    for (int t = 0; t < 6; ++t) {
        const size_t idx = pick() % prompt->val.data.size();
        const double num = numeric_grad(eval, prompt, idx, 1e-4);
        CHECK(rel_err(prompt->grad.data[idx], num, 1e-6) < 1e-3);
    }
}

TEST_CASE("forward_full: single-sample overfit drives the loss down") {
    SceneSpec spec = tiny_spec();
    auto sample = generate_scene(spec, Split::Train, 3);
    auto model = assemble_model(tiny_config(RunMode::Baseline), 7);
    auto spec_t = build_trainability(model->store, model->cfg, TrainabilityMode::Joint);

    ForwardOptions opts;
    opts.training = true;
    double first = 0.0, last = 0.0;
    // plain Adam-style loop, larger rate: this is an optimization sanity check
    struct {
        std::map<std::string, Tensor> m, v;
        int64_t t = 0;
    } st;
    for (int step = 0; step < 20; ++step) {
        model->store.zero_grads();
        auto res = forward_full(*model, sample, opts);
        if (step == 0) first = res.loss_value;
        last = res.loss_value;
        CHECK(std::isfinite(res.loss_value));
        ag::backward(res.loss);
        ++st.t;
        for (const auto& name : spec_t.trainable_names) {
            auto p = model->store.get(name);
            if (p->grad.data.empty()) continue;
            auto& m = st.m[name];
            auto& v = st.v[name];
            if (m.data.empty()) m = Tensor::zeros(p->val.shape);
            if (v.data.empty()) v = Tensor::zeros(p->val.shape);
            const double bc1 = 1.0 - std::pow(0.9, st.t), bc2 = 1.0 - std::pow(0.999, st.t);
            for (size_t i = 0; i < p->val.data.size(); ++i) {
                const double g = p->grad.data[i];
                m.data[i] = 0.9 * m.data[i] + 0.1 * g;
                v.data[i] = 0.999 * v.data[i] + 0.001 * g * g;
                p->val.data[i] -= 3e-3 * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + 1e-8);
            }
        }
    }
    CHECK(last < first);
}

TEST_SUITE_END();
