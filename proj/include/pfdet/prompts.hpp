#pragma once

#include <set>
#include <string>

#include "pfdet/config.hpp"
#include "pfdet/feature_map.hpp"

namespace pfdet {

// Trainable soft prompts, one tensor per enabled level. Levels 1/2 live on
// the full BEV grid, level 3a on the fine BEV-backbone scale, level 3b on the
// half-resolution coarse scale.
struct PromptSet {
    ag::Value level1, level2, level3a, level3b;  // null when disabled
};

PromptSet init_prompts(ag::ParamStore& store, const ModelConfig& cfg, uint64_t seed);

// 1x1 channel-align conv mapping (C + level2_channels) back to C, initialized
// as [identity | zeros] so enabling level 2 is behavior-preserving at step 0.
struct AlignConv {
    ag::Value w, b;
    int in_channels = 0;
    int out_channels = 0;
};

AlignConv make_align(ag::ParamStore& store, int bev_channels, int level2_channels,
                     uint64_t seed);

// Concat P_S onto F_BEV. Disabled level (null prompt) is the identity.
FeatureMap attach_level1(const FeatureMap& f_bev, const PromptSet& p);

// Concat P_S2 onto the fused features, then compress back with the align conv.
FeatureMap attach_level2_align(const FeatureMap& f_fused, const PromptSet& p,
                               const AlignConv& align);

// Concat the scale-matched level-3 prompt (scale_index 1 = fine, 2 = coarse).
FeatureMap attach_level3(const FeatureMap& f_scale, const PromptSet& p, int scale_index);

// Exhaustive partition of the registry into trainable and frozen names,
// enforced per optimization step.
struct TrainabilitySpec {
    std::set<std::string> trainable_names;
    std::set<std::string> frozen_names;

    bool is_trainable(const std::string& name) const { return trainable_names.count(name) > 0; }
};

// LidarOnly: the BEV stream and head, with the camera path and prompts left
// untouched. Otherwise: full fine-tune (stubs frozen) when freeze_pre_bev is
// off; prompts plus everything after F_BEV when it is on.
TrainabilitySpec build_trainability(const ag::ParamStore& store, const ModelConfig& cfg,
                                    TrainabilityMode mode);

}  // namespace pfdet
