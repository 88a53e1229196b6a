#pragma once

#include <memory>

#include "pfdet/backbone.hpp"
#include "pfdet/bev.hpp"
#include "pfdet/config.hpp"
#include "pfdet/foundation.hpp"
#include "pfdet/prompts.hpp"
#include "pfdet/scenes.hpp"

namespace pfdet {

// A fully wired detector. Parameter initialization is keyed by
// (seed, canonical name) only, so two models sharing a name share its initial
// value regardless of which branches are enabled.
struct AssembledModel {
    ModelConfig cfg;
    uint64_t seed = 0;
    ag::ParamStore store;
    std::vector<StageParams> stages;
    FpnMerge fpn;
    FoundationBranch foundation;
    PromptSet prompts;
    AlignConv align;  // valid when level-2 prompts are enabled
    BevStream bev;
    std::string config_hash;

    AssembledModel() = default;
    AssembledModel(const AssembledModel&) = delete;
    AssembledModel& operator=(const AssembledModel&) = delete;
};

std::unique_ptr<AssembledModel> assemble_model(const ModelConfig& cfg, uint64_t seed);

// Channel counts and shapes observed during a forward pass.
struct ShapeLedger {
    int post_level1 = 0;        // channels into the fusion encoder
    int post_fuse = 0;          // channels out of the fusion encoder
    int post_level2_concat = 0; // channels before the align conv
    int post_align = 0;         // channels after the align conv
    std::array<int, 3> level3_fine{0, 0, 0};
    std::array<int, 3> level3_coarse{0, 0, 0};
};

struct ForwardOptions {
    bool training = false;    // build loss (and keep the autograd tape)
    bool lidar_only = false;  // zero image features, skip foundation branch
    bool decode = true;       // decode boxes (forced off while training)
};

struct ForwardResult {
    std::vector<DetectionBox> boxes;
    ag::Value loss;  // set when training
    double loss_value = 0.0;
    ShapeLedger ledger;
    Tensor heat_logits;  // raw head outputs (inference passes)
    Tensor reg;
};

ForwardResult forward_full(AssembledModel& model, const SceneSample& sample,
                           const ForwardOptions& opts);

// Per-stage architecture: stage 1 trains the lidar stream on the baseline
// wiring; later stages enable the mode's branches.
ModelConfig derive_stage1_config(const ModelConfig& cfg);

}  // namespace pfdet
