#include "pfdet/foundation.hpp"

#include <algorithm>
#include <cmath>

namespace pfdet {

namespace {

constexpr int kStubInput = 224;  // nominal stub input side
constexpr int kStubC1 = 24;
constexpr int kStubC2 = 48;
constexpr int kStubPool = 4;  // adaptive pool bins
constexpr int kPointHidden = 64;
constexpr int kPointDim = 256;

Tensor seeded_uniform(std::vector<int> shape, double bound, uint64_t seed,
                      const std::string& name) {
    auto rng = rng_for(seed, name);
    return rand_uniform(std::move(shape), -bound, bound, rng);
}

// Plain (non-autograd) helpers; stubs are frozen so no gradients ever flow
// through them.
Tensor plain_conv_relu(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    for (int co = 0; co < cout; ++co)
        for (int r = 0; r < ho; ++r)
            for (int c = 0; c < wo; ++c) {
                double acc = b.data[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ki = 0; ki < kh; ++ki) {
                        const int ir = r * stride - pad + ki;
                        if (ir < 0 || ir >= h) continue;
                        for (int kj = 0; kj < kw; ++kj) {
                            const int ic = c * stride - pad + kj;
                            if (ic < 0 || ic >= wd) continue;
                            acc += x.at(ci, ir, ic) *
                                   w.data[((static_cast<size_t>(co) * cin + ci) * kh + ki) * kw +
                                          kj];
                        }
                    }
                out.at(co, r, c) = acc > 0.0 ? acc : 0.0;
            }
    return out;
}

Tensor plain_resize(const Tensor& x, int oh, int ow) {
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < oh; ++r)
            for (int col = 0; col < ow; ++col) {
                double sr = (r + 0.5) * h / oh - 0.5;
                double sc = (col + 0.5) * w / ow - 0.5;
                sr = std::clamp(sr, 0.0, h - 1.0);
                sc = std::clamp(sc, 0.0, w - 1.0);
                const int r0 = static_cast<int>(sr), c0 = static_cast<int>(sc);
                const int r1 = std::min(r0 + 1, h - 1), c1 = std::min(c0 + 1, w - 1);
                const double fr = sr - r0, fc = sc - c0;
                out.at(ch, r, col) =
                    (1 - fr) * ((1 - fc) * x.at(ch, r0, c0) + fc * x.at(ch, r0, c1)) +
                    fr * ((1 - fc) * x.at(ch, r1, c0) + fc * x.at(ch, r1, c1));
            }
    return out;
}

Tensor adaptive_mean_pool(const Tensor& x, int bins) {
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, bins, bins});
    for (int ch = 0; ch < c; ++ch)
        for (int br = 0; br < bins; ++br)
            for (int bc = 0; bc < bins; ++bc) {
                const int r0 = br * h / bins, r1 = (br + 1) * h / bins;
                const int c0 = bc * w / bins, c1 = (bc + 1) * w / bins;
                double acc = 0.0;
                for (int r = r0; r < r1; ++r)
                    for (int col = c0; col < c1; ++col) acc += x.at(ch, r, col);
                out.at(ch, br, bc) = acc / std::max(1, (r1 - r0) * (c1 - c0));
            }
    return out;
}

int learned_upsample_steps(int h, int w) {
    int steps = 0, side = 1;
    while (side * 2 <= std::max(h, w)) {
        side *= 2;
        ++steps;
    }
    return steps;
}

}  // namespace

int image_encoder_dim(ImageEncoderKind kind) {
    switch (kind) {
        case ImageEncoderKind::VitLStub: return 768;
        case ImageEncoderKind::Resnet50Stub: return 1024;
        case ImageEncoderKind::None: return 0;
    }
    return 0;
}

void check_learned_upsample_target(int h, int w) {
    const int lo = std::min(h, w), hi = std::max(h, w);
    if (lo < 2 || hi > 2 * lo)
        throw ConfigError(
            "learned upsampler cannot reach " + std::to_string(h) + "x" + std::to_string(w) +
            "; supported targets have min side >= 2 and aspect ratio at most 2 "
            "(factor-2 stages plus a final resize)");
}

FoundationBranch make_foundation_branch(ag::ParamStore& store, const FoundationConfig& cfg,
                                        int lidar_channels, int bev_h, int bev_w,
                                        uint64_t init_seed) {
    FoundationBranch b;
    b.cfg = cfg;
    const uint64_t fseed = cfg.foundation_seed;
    if (cfg.image_encoder != ImageEncoderKind::None) {
        b.image_dim = image_encoder_dim(cfg.image_encoder);
        const int flat = kStubC2 * kStubPool * kStubPool;
        b.img_conv1_w = store.adopt("foundation.image.conv1.weight",
                                    seeded_uniform({kStubC1, 3, 3, 3}, std::sqrt(3.0 / 27.0),
                                                   fseed, "foundation.image.conv1.weight"));
        b.img_conv1_b =
            store.adopt("foundation.image.conv1.bias",
                        seeded_uniform({kStubC1}, 0.1, fseed, "foundation.image.conv1.bias"));
        b.img_conv2_w = store.adopt(
            "foundation.image.conv2.weight",
            seeded_uniform({kStubC2, kStubC1, 3, 3}, std::sqrt(3.0 / (kStubC1 * 9.0)), fseed,
                           "foundation.image.conv2.weight"));
        b.img_conv2_b =
            store.adopt("foundation.image.conv2.bias",
                        seeded_uniform({kStubC2}, 0.1, fseed, "foundation.image.conv2.bias"));
        b.img_proj_w =
            store.adopt("foundation.image.proj.weight",
                        seeded_uniform({b.image_dim, flat}, std::sqrt(3.0 / flat), fseed,
                                       "foundation.image.proj.weight"));
        b.img_proj_b =
            store.adopt("foundation.image.proj.bias",
                        seeded_uniform({b.image_dim}, 0.05, fseed, "foundation.image.proj.bias"));
    }
    if (cfg.point_encoder != PointEncoderKind::None) {
        if (cfg.point_compress_channels < 1 || cfg.point_compress_channels > kPointDim)
            throw ConfigError("point_compress_channels must be in [1, " +
                              std::to_string(kPointDim) + "], got " +
                              std::to_string(cfg.point_compress_channels));
        b.point_in_dim = 2 + lidar_channels;
        b.pt_w1 = store.adopt("foundation.point.mlp1.weight",
                              seeded_uniform({kPointHidden, b.point_in_dim},
                                             std::sqrt(3.0 / b.point_in_dim), fseed,
                                             "foundation.point.mlp1.weight"));
        b.pt_b1 = store.adopt(
            "foundation.point.mlp1.bias",
            seeded_uniform({kPointHidden}, 0.1, fseed, "foundation.point.mlp1.bias"));
        b.pt_w2 = store.adopt("foundation.point.mlp2.weight",
                              seeded_uniform({kPointDim, kPointHidden},
                                             std::sqrt(3.0 / kPointHidden), fseed,
                                             "foundation.point.mlp2.weight"));
        b.pt_b2 = store.adopt(
            "foundation.point.mlp2.bias",
            seeded_uniform({kPointDim}, 0.1, fseed, "foundation.point.mlp2.bias"));

        const int cc = cfg.point_compress_channels;
        ag::InitSpec ci = cc == kPointDim
                              ? ag::InitSpec{ag::Init::IdentityMatrix, 0, 0, 0}
                              : ag::InitSpec{ag::Init::FanInUniform, 0, 0, kPointDim};
        b.compress_w = store.create("foundation.compress.weight", {cc, kPointDim}, ci, init_seed);
        b.compress_b = store.create("foundation.compress.bias", {cc},
                                    ag::InitSpec{ag::Init::Zeros, 0, 0, 0}, init_seed);
        if (cfg.point_upsample_mode == UpsampleMode::Learned) {
            check_learned_upsample_target(bev_h, bev_w);
            const int steps = learned_upsample_steps(bev_h, bev_w);
            for (int s = 0; s < steps; ++s) {
                const std::string base = "foundation.upsample.tconv" + std::to_string(s + 1);
                // Last stage zero-initialized: an untrained upsampler adds nothing.
                ag::InitSpec wi = s + 1 == steps
                                      ? ag::InitSpec{ag::Init::Zeros, 0, 0, 0}
                                      : ag::InitSpec{ag::Init::FanInUniform, 0, 0, cc * 9};
                b.up_w.push_back(store.create(base + ".weight", {cc, cc, 3, 3}, wi, init_seed));
                b.up_b.push_back(store.create(base + ".bias", {cc},
                                              ag::InitSpec{ag::Init::Zeros, 0, 0, 0}, init_seed));
            }
        }
    }
    return b;
}

FoundationVector encode_image_foundation(const FoundationBranch& b, const Tensor& image) {
    if (b.cfg.image_encoder == ImageEncoderKind::None)
        throw ConfigError("image foundation encoder is not enabled");
    if (image.rank() != 3 || image.shape[0] != 3)
        throw DimensionError("image stub expects a [3,H,W] tensor, got " + image.shape_str());
    Tensor x = plain_resize(image, kStubInput, kStubInput);
    x = plain_conv_relu(x, b.img_conv1_w->val, b.img_conv1_b->val, 4, 1);
    x = plain_conv_relu(x, b.img_conv2_w->val, b.img_conv2_b->val, 4, 1);
    x = adaptive_mean_pool(x, kStubPool);
    FoundationVector v;
    v.modality = Modality::Image;
    v.encoder_id =
        b.cfg.image_encoder == ImageEncoderKind::VitLStub ? "vit_l_stub" : "resnet50_stub";
    v.values = Tensor({b.image_dim});
    const int flat = kStubC2 * kStubPool * kStubPool;
    for (int o = 0; o < b.image_dim; ++o) {
        double acc = b.img_proj_b->val.data[o];
        for (int i = 0; i < flat; ++i)
            acc += b.img_proj_w->val.data[static_cast<size_t>(o) * flat + i] * x.data[i];
        v.values.data[o] = std::tanh(acc);
    }
    return v;
}

FoundationVector encode_point_foundation(const FoundationBranch& b, const Tensor& lidar_bev) {
    if (b.cfg.point_encoder == PointEncoderKind::None)
        throw ConfigError("point foundation encoder is not enabled");
    if (lidar_bev.rank() != 3 || lidar_bev.shape[0] + 2 != b.point_in_dim)
        throw DimensionError("point stub expects [" + std::to_string(b.point_in_dim - 2) +
                             ",H,W], got " + lidar_bev.shape_str());
    const int ch = lidar_bev.shape[0], h = lidar_bev.shape[1], w = lidar_bev.shape[2];
    FoundationVector v;
    v.modality = Modality::Point;
    v.encoder_id = "pointbert_stub";
    v.values = Tensor::full({kPointDim}, -1e30);
    std::vector<double> in(b.point_in_dim), hid(kPointHidden);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            in[0] = (c + 0.5) / w - 0.5;
            in[1] = (r + 0.5) / h - 0.5;
            for (int i = 0; i < ch; ++i) in[2 + i] = lidar_bev.at(i, r, c);
            for (int o = 0; o < kPointHidden; ++o) {
                double acc = b.pt_b1->val.data[o];
                for (int i = 0; i < b.point_in_dim; ++i)
                    acc += b.pt_w1->val.data[static_cast<size_t>(o) * b.point_in_dim + i] * in[i];
                hid[o] = acc > 0.0 ? acc : 0.0;
            }
            for (int o = 0; o < kPointDim; ++o) {
                double acc = b.pt_b2->val.data[o];
                for (int i = 0; i < kPointHidden; ++i)
                    acc += b.pt_w2->val.data[static_cast<size_t>(o) * kPointHidden + i] * hid[i];
                v.values.data[o] = std::max(v.values.data[o], acc);
            }
        }
    for (auto& x : v.values.data) x = std::tanh(x);
    return v;
}

namespace {
FoundationVector cached(const FoundationBranch& b, const Tensor& input,
                        const std::string& sample_id, bool image) {
    auto& cache = image ? b.cache->image : b.cache->point;
    {
        std::lock_guard<std::mutex> lk(b.cache->mu);
        auto it = cache.find(sample_id);
        if (it != cache.end()) {
            FoundationVector v;
            v.values = it->second;
            v.modality = image ? Modality::Image : Modality::Point;
            v.encoder_id = image ? (b.cfg.image_encoder == ImageEncoderKind::VitLStub
                                        ? "vit_l_stub"
                                        : "resnet50_stub")
                                 : "pointbert_stub";
            return v;
        }
    }
    FoundationVector v =
        image ? encode_image_foundation(b, input) : encode_point_foundation(b, input);
    std::lock_guard<std::mutex> lk(b.cache->mu);
    cache[sample_id] = v.values;
    return v;
}
}  // namespace

FoundationVector encode_image_cached(const FoundationBranch& b, const Tensor& image,
                                     const std::string& sample_id) {
    return cached(b, image, sample_id, true);
}

FoundationVector encode_point_cached(const FoundationBranch& b, const Tensor& lidar_bev,
                                     const std::string& sample_id) {
    return cached(b, lidar_bev, sample_id, false);
}

FeatureMap broadcast_vector(const FoundationVector& v, int h, int w) {
    if (h < 1 || w < 1) throw DimensionError("broadcast_vector: target dims must be >= 1");
    return feature_map(ag::broadcast_hw(ag::make_const(v.values), h, w), GridRole::ImageScale);
}

FeatureMap concat_foundation(const FeatureMap& xN, const FeatureMap& vmap) {
    if (vmap.channels() == 0) return xN;
    if (vmap.height() != xN.height() || vmap.width() != xN.width())
        throw DimensionError("concat_foundation: spatial mismatch " + xN.v->val.shape_str() +
                             " vs " + vmap.v->val.shape_str());
    return feature_map(ag::concat_channels({xN.v, vmap.v}), xN.role);
}

ag::Value compress_channels(const FoundationBranch& b, const FoundationVector& v) {
    if (!b.compress_w) throw ConfigError("compress_channels: point branch not enabled");
    return ag::linear(ag::make_const(v.values), b.compress_w, b.compress_b);
}

ag::Value upsample_point_features(const FoundationBranch& b, const ag::Value& compressed,
                                  UpsampleMode mode, int h, int w) {
    if (mode == UpsampleMode::Repeat) return ag::broadcast_hw(compressed, h, w);
    check_learned_upsample_target(h, w);
    const int steps = learned_upsample_steps(h, w);
    if (static_cast<int>(b.up_w.size()) != steps)
        throw ConfigError("learned upsampler has " + std::to_string(b.up_w.size()) +
                          " stages but target " + std::to_string(h) + "x" + std::to_string(w) +
                          " needs " + std::to_string(steps));
    auto x = ag::broadcast_hw(compressed, 1, 1);  // [c] -> [c,1,1]
    for (int s = 0; s < steps; ++s) {
        x = ag::conv_transpose2d(x, b.up_w[s], b.up_b[s], 2, 1, 1);
        if (s + 1 < steps) x = ag::relu(x);
    }
    if (x->val.shape[1] != h || x->val.shape[2] != w) x = ag::bilinear_resize(x, h, w);
    return x;
}

}  // namespace pfdet
