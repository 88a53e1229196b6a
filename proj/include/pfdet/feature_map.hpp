#pragma once

#include "pfdet/autograd.hpp"

namespace pfdet {

enum class GridRole { ImageScale, Bev, MsBev };

// A rank-3 activation [channels, height, width] tagged with the grid it
// lives on.
struct FeatureMap {
    ag::Value v;
    GridRole role = GridRole::ImageScale;

    int channels() const { return v->val.shape[0]; }
    int height() const { return v->val.shape[1]; }
    int width() const { return v->val.shape[2]; }
};

inline FeatureMap feature_map(ag::Value v, GridRole role) { return FeatureMap{std::move(v), role}; }

}  // namespace pfdet
