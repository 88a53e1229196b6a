#pragma once

#include <mutex>
#include <string>
#include <unordered_map>

#include "pfdet/config.hpp"
#include "pfdet/feature_map.hpp"
#include "pfdet/tensor.hpp"

namespace pfdet {

enum class Modality { Image, Point };

struct FoundationVector {
    Tensor values;  // rank-1, length d
    Modality modality = Modality::Image;
    std::string encoder_id;

    int dim() const { return values.shape[0]; }
};

// Per-sample memo of stub outputs; stubs are pure functions of the input.
struct FoundationCache {
    std::mutex mu;
    std::unordered_map<std::string, Tensor> image;
    std::unordered_map<std::string, Tensor> point;
};

// Frozen stand-in encoders with the real encoders' output dimensions:
// image stubs emit 768 (ViT-L) or 1024 (ResNet50) wide vectors from a
// 224x224 resample; the point stub emits 256 via a per-cell MLP + max pool.
// Parameters are seeded from foundation_seed and never trained.
struct FoundationBranch {
    FoundationConfig cfg;

    // image stub
    ag::Value img_conv1_w, img_conv1_b, img_conv2_w, img_conv2_b, img_proj_w, img_proj_b;
    int image_dim = 0;

    // point stub
    ag::Value pt_w1, pt_b1, pt_w2, pt_b2;
    int point_in_dim = 0;

    // trainable pieces
    ag::Value compress_w, compress_b;   // 256 -> point_compress_channels
    std::vector<ag::Value> up_w, up_b;  // learned upsampler stack

    std::shared_ptr<FoundationCache> cache = std::make_shared<FoundationCache>();
};

int image_encoder_dim(ImageEncoderKind kind);  // 768 / 1024

// bev_h/bev_w size the learned point upsampler; init_seed covers the
// trainable compression/upsampler, foundation_seed the frozen stubs.
FoundationBranch make_foundation_branch(ag::ParamStore& store, const FoundationConfig& cfg,
                                        int lidar_channels, int bev_h, int bev_w,
                                        uint64_t init_seed);

// Pure (uncached) encoders.
FoundationVector encode_image_foundation(const FoundationBranch& b, const Tensor& image);
FoundationVector encode_point_foundation(const FoundationBranch& b, const Tensor& lidar_bev);

// Cached by sample id; thread-safe.
FoundationVector encode_image_cached(const FoundationBranch& b, const Tensor& image,
                                     const std::string& sample_id);
FoundationVector encode_point_cached(const FoundationBranch& b, const Tensor& lidar_bev,
                                     const std::string& sample_id);

FeatureMap broadcast_vector(const FoundationVector& v, int h, int w);

// Channel concat; a zero-channel vmap is the disabled-branch sentinel and
// returns xN unchanged.
FeatureMap concat_foundation(const FeatureMap& xN, const FeatureMap& vmap);

// Learned projection of the 256-wide point vector; identity-initialized when
// square. Differentiable.
ag::Value compress_channels(const FoundationBranch& b, const FoundationVector& v);

// REPEAT broadcasts; LEARNED runs the transposed-conv stack (factor-2 steps
// to the largest power of two <= max(h, w), then a bilinear resize).
ag::Value upsample_point_features(const FoundationBranch& b, const ag::Value& compressed,
                                  UpsampleMode mode, int h, int w);

// Target sizes the learned stack supports; throws ConfigError otherwise.
void check_learned_upsample_target(int h, int w);

}  // namespace pfdet
