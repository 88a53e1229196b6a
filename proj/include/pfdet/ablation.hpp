#pragma once

#include <string>
#include <vector>

#include "pfdet/config.hpp"
#include "pfdet/scenes.hpp"
#include "pfdet/train.hpp"

namespace pfdet {

struct AblationRowSpec {
    std::string label;
    ModelConfig cfg;
    // Channel value plotted on sweep charts; <0 = not part of a sweep.
    int sweep_channel = -1;
};

struct AblationRow {
    std::string config_id;
    std::string config_hash;
    int seed_count = 0;
    double map_mean = 0.0, map_std = 0.0;
    double composite_mean = 0.0, composite_std = 0.0;
    int64_t trainable_param_count = 0;
    double wall_seconds = 0.0;
    int sweep_channel = -1;
    std::vector<double> per_seed_map;
};

// The experiment grids: overall module on/off matrix, the foundation-encoder
// matrix, and the prompt-channel sweep (single-level, two-level pairs, and
// the four-level row).
std::vector<AblationRowSpec> table1_grid(const ModelConfig& base);
std::vector<AblationRowSpec> table2_grid(const ModelConfig& base);
std::vector<AblationRowSpec> table3_grid(const ModelConfig& base);

struct AblationOptions {
    std::vector<uint64_t> seeds{7};
    std::vector<StageSchedule> schedule = desk_schedule();
    SceneSpec spec;  // provenance of the shared dataset
    double fraction = 1.0;
    int threads = 2;
    std::string work_dir = "ablation_work";
};

// One staged training run per (row, seed); rows aggregate over seeds. Rows
// are independent and run on a pool; stage-1 checkpoints are shared across
// rows with identical stage-1 configs.
std::vector<AblationRow> run_ablation(const std::vector<AblationRowSpec>& grid,
                                      const Dataset& data, const AblationOptions& opts);

std::string ablation_csv(const std::vector<AblationRow>& rows);

// mAP-vs-channel line chart of the sweep rows (sweep_channel >= 0).
std::string sweep_svg(const std::vector<AblationRow>& rows, const std::string& title);

}  // namespace pfdet
