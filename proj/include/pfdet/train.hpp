#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pfdet/checkpoint.hpp"
#include "pfdet/metrics.hpp"
#include "pfdet/model.hpp"

namespace pfdet {

// First-order reference optimizer: Adam with decoupled weight decay and a
// fixed step size. Only names listed trainable are ever touched.
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int64_t t = 0;
    std::map<std::string, Tensor> m, v;

    void step(ag::ParamStore& store, const TrainabilitySpec& spec);
};

// Sets requires_grad per the partition so backward skips frozen subgraphs.
void apply_trainability(ag::ParamStore& store, const TrainabilitySpec& spec);

int64_t count_trainable_scalars(const ag::ParamStore& store, const TrainabilitySpec& spec);

struct StageResult {
    Checkpoint checkpoint;  // f32-rounded parameter snapshot
    MetricsReport metrics;
    int64_t trainable_scalars = 0;
    int64_t total_scalars = 0;
    double wall_seconds = 0.0;
};

struct EvalOptions {
    bool lidar_only = false;
    int threads = 1;
};

// Decode-and-score over a sample list with a frozen model.
MetricsReport evaluate(AssembledModel& model, const std::vector<SceneSample>& samples,
                       const EvalOptions& opts, BoxSet* dump_preds = nullptr);

// One schedule entry: optional checkpoint load, epochs of per-sample AdamW
// steps in a seeded shuffled order, then a validation pass.
StageResult run_stage(AssembledModel& model, const StageSchedule& sched,
                      const std::vector<SceneSample>& train,
                      const std::vector<SceneSample>& val, uint64_t run_seed,
                      int eval_threads = 1);

struct StagedTrainResult {
    std::vector<MetricsReport> stage_metrics;
    std::string final_checkpoint;  // path of stage3.ckpt
    int64_t trainable_scalars = 0;  // of the final stage
    int64_t total_scalars = 0;
    double wall_seconds = 0.0;
};

// The three-stage protocol. Writes stageN.ckpt and stageN.metrics.json under
// out_dir; every stage starts from the previous stage's saved file, so a
// resumed run is bit-identical to a straight-through one. Stage 2 for the
// combined mode trains the foundation-assisted and prompted configs
// separately and merges them (prompted run wins on shared names).
StagedTrainResult run_staged_training(const RunConfig& rc, const Dataset& data,
                                      const std::string& out_dir, int eval_threads = 1,
                                      const std::string& stage1_cache = "");

}  // namespace pfdet
