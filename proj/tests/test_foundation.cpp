#include "doctest.h"

#include <random>

#include "pfdet/foundation.hpp"
#include "testing.hpp"

using namespace pfdet;
using namespace pftest;
namespace ag = pfdet::ag;

namespace {

FoundationConfig image_cfg(ImageEncoderKind kind) {
    FoundationConfig c;
    c.image_encoder = kind;
    return c;
}

FoundationConfig point_cfg(int compress, UpsampleMode mode) {
    FoundationConfig c;
    c.point_encoder = PointEncoderKind::PointBertStub;
    c.point_compress_channels = compress;
    c.point_upsample_mode = mode;
    return c;
}

}  // namespace

TEST_SUITE_BEGIN("foundation");

TEST_CASE("image stubs emit the advertised dimensions") {
    std::mt19937_64 rng(4);
    Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);

    ag::ParamStore s1;
    auto vit = make_foundation_branch(s1, image_cfg(ImageEncoderKind::VitLStub), 2, 36, 36, 7);
    auto v = encode_image_foundation(vit, image);
    CHECK(v.dim() == 768);
    CHECK(v.encoder_id == "vit_l_stub");
    CHECK(v.values.all_finite());

    ag::ParamStore s2;
    auto rn = make_foundation_branch(s2, image_cfg(ImageEncoderKind::Resnet50Stub), 2, 36, 36, 7);
    CHECK(encode_image_foundation(rn, image).dim() == 1024);
}

TEST_CASE("stub encoding is deterministic and caching returns identical values") {
    std::mt19937_64 rng(5);
    Tensor image = random_tensor({3, 24, 24}, rng, 0.0, 1.0);
    ag::ParamStore store;
    auto b = make_foundation_branch(store, image_cfg(ImageEncoderKind::VitLStub), 2, 36, 36, 7);
    auto a1 = encode_image_foundation(b, image);
    auto a2 = encode_image_foundation(b, image);
    CHECK(a1.values.data == a2.values.data);
    auto c1 = encode_image_cached(b, image, "x");
    auto c2 = encode_image_cached(b, image, "x");
    CHECK(c1.values.data == a1.values.data);
    CHECK(c2.values.data == a1.values.data);
}

TEST_CASE("disabled encoders raise configuration errors") {
    ag::ParamStore store;
    FoundationConfig off;
    auto b = make_foundation_branch(store, off, 2, 36, 36, 7);
    Tensor image({3, 8, 8});
    CHECK_THROWS_AS(encode_image_foundation(b, image), ConfigError);
    CHECK_THROWS_AS(encode_point_foundation(b, image), ConfigError);
}

TEST_CASE("point stub: length 256, deterministic, distinct on distinct inputs") {
    ag::ParamStore store;
    auto b = make_foundation_branch(store, point_cfg(50, UpsampleMode::Repeat), 2, 36, 36, 7);
    std::mt19937_64 rng(6);
    Tensor lidar = random_tensor({2, 12, 12}, rng, 0.0, 1.0);
    auto v = encode_point_foundation(b, lidar);
    CHECK(v.dim() == 256);
    CHECK(encode_point_foundation(b, lidar).values.data == v.values.data);

    int distinct = 0;
    for (int t = 0; t < 100; ++t) {
        Tensor a = random_tensor({2, 12, 12}, rng, 0.0, 1.0);
        Tensor c = random_tensor({2, 12, 12}, rng, 0.0, 1.0);
        if (encode_point_foundation(b, a).values.data !=
            encode_point_foundation(b, c).values.data)
            ++distinct;
    }
    CHECK(distinct == 100);
}

TEST_CASE("broadcast places the vector everywhere with zero spatial variance") {
    FoundationVector v;
    v.values = Tensor({5}, {1.0, -2.0, 0.5, 3.0, 0.0});
    SUBCASE("degenerate 1x1") {
        auto m = broadcast_vector(v, 1, 1);
        CHECK(m.v->val.shape == std::vector<int>{5, 1, 1});
        for (int c = 0; c < 5; ++c) CHECK(m.v->val.at(c, 0, 0) == v.values.data[c]);
    }
    SUBCASE("14x25 grid") {
        auto m = broadcast_vector(v, 14, 25);
        CHECK(m.v->val.shape == std::vector<int>{5, 14, 25});
        for (int c = 0; c < 5; ++c) {
            double mean = 0.0;
            for (int r = 0; r < 14; ++r)
                for (int col = 0; col < 25; ++col) mean += m.v->val.at(c, r, col);
            mean /= 14.0 * 25.0;
            double var = 0.0;
            for (int r = 0; r < 14; ++r)
                for (int col = 0; col < 25; ++col) {
                    const double d = m.v->val.at(c, r, col) - mean;
                    var += d * d;
                }
            CHECK(var == 0.0);
            CHECK(m.v->val.at(c, 7, 11) == v.values.data[c]);
        }
    }
}

TEST_CASE("foundation concat: block layout, sentinel, and spatial guard") {
    std::mt19937_64 rng(7);
    auto xN = feature_map(ag::make_const(random_tensor({6, 5, 4}, rng)), GridRole::ImageScale);
    auto vmap = feature_map(ag::make_const(random_tensor({3, 5, 4}, rng)), GridRole::ImageScale);
    auto cat = concat_foundation(xN, vmap);
    CHECK(cat.channels() == 9);
    // slice oracle: both blocks recoverable exactly
    for (int c = 0; c < 6; ++c)
        for (int r = 0; r < 5; ++r)
            for (int col = 0; col < 4; ++col)
                CHECK(cat.v->val.at(c, r, col) == xN.v->val.at(c, r, col));
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 5; ++r)
            for (int col = 0; col < 4; ++col)
                CHECK(cat.v->val.at(6 + c, r, col) == vmap.v->val.at(c, r, col));

    auto empty = feature_map(ag::make_const(Tensor({0, 5, 4})), GridRole::ImageScale);
    auto same = concat_foundation(xN, empty);
    CHECK(same.v.get() == xN.v.get());

    auto bad = feature_map(ag::make_const(Tensor({3, 4, 4})), GridRole::ImageScale);
    CHECK_THROWS_AS(concat_foundation(xN, bad), DimensionError);
}

TEST_CASE("channel compression: sizes, identity init, gradient") {
    std::mt19937_64 rng(8);
    Tensor lidar = random_tensor({2, 12, 12}, rng, 0.0, 1.0);

    for (int cc : {50, 100}) {
        ag::ParamStore store;
        auto b = make_foundation_branch(store, point_cfg(cc, UpsampleMode::Repeat), 2, 36, 36, 7);
        auto v = encode_point_foundation(b, lidar);
        auto out = compress_channels(b, v);
        CHECK(out->val.shape == std::vector<int>{cc});
    }

    SUBCASE("square projection is identity at init") {
        ag::ParamStore store;
        auto b =
            make_foundation_branch(store, point_cfg(256, UpsampleMode::Repeat), 2, 36, 36, 7);
        auto v = encode_point_foundation(b, lidar);
        auto out = compress_channels(b, v);
        for (int i = 0; i < 256; ++i) CHECK(out->val.data[i] == v.values.data[i]);
    }

    SUBCASE("compression gradient matches finite differences") {
        ag::ParamStore store;
        auto b = make_foundation_branch(store, point_cfg(8, UpsampleMode::Repeat), 2, 36, 36, 7);
        auto v = encode_point_foundation(b, lidar);
        auto loss_fn = [&] { return ag::sum_all(ag::sigmoid(compress_channels(b, v))); };
        auto loss = loss_fn();
        ag::backward(loss);
        auto eval = [&] { return loss_fn()->val.data[0]; };
        std::mt19937_64 pick(1);
        for (int t = 0; t < 8; ++t) {
            const size_t idx = pick() % b.compress_w->val.data.size();
            const double num = numeric_grad(eval, b.compress_w, idx, 1e-5);
            CHECK(rel_err(b.compress_w->grad.data[idx], num, 1e-5) < 1e-3);
        }
    }

    SUBCASE("out-of-range compression width is rejected") {
        ag::ParamStore store;
        CHECK_THROWS_AS(
            make_foundation_branch(store, point_cfg(0, UpsampleMode::Repeat), 2, 36, 36, 7),
            ConfigError);
        ag::ParamStore store2;
        CHECK_THROWS_AS(
            make_foundation_branch(store2, point_cfg(300, UpsampleMode::Repeat), 2, 36, 36, 7),
            ConfigError);
    }
}

TEST_CASE("point upsampling: repeat constancy, learned safe start and shapes") {
    std::mt19937_64 rng(9);
    Tensor lidar = random_tensor({2, 12, 12}, rng, 0.0, 1.0);

    SUBCASE("repeat broadcasts the compressed vector") {
        ag::ParamStore store;
        auto b = make_foundation_branch(store, point_cfg(5, UpsampleMode::Repeat), 2, 36, 36, 7);
        auto v = encode_point_foundation(b, lidar);
        auto comp = compress_channels(b, v);
        auto map = upsample_point_features(b, comp, UpsampleMode::Repeat, 18, 18);
        CHECK(map->val.shape == std::vector<int>{5, 18, 18});
        for (int c = 0; c < 5; ++c)
            for (int r = 0; r < 18; ++r)
                for (int col = 0; col < 18; ++col)
                    CHECK(map->val.at(c, r, col) == comp->val.data[c]);
    }

    SUBCASE("learned stack is zero at init and hits the target shape") {
        ag::ParamStore store;
        auto b = make_foundation_branch(store, point_cfg(5, UpsampleMode::Learned), 2, 36, 36, 7);
        auto v = encode_point_foundation(b, lidar);
        auto comp = compress_channels(b, v);
        auto map = upsample_point_features(b, comp, UpsampleMode::Learned, 36, 36);
        CHECK(map->val.shape == std::vector<int>{5, 36, 36});
        for (double x : map->val.data) CHECK(x == 0.0);
    }

    SUBCASE("unreachable learned target names the supported sizes") {
        ag::ParamStore store;
        CHECK_THROWS_WITH_AS(
            make_foundation_branch(store, point_cfg(5, UpsampleMode::Learned), 2, 10, 100, 7),
            doctest::Contains("supported targets"), ConfigError);
    }
}

TEST_SUITE_END();
