#pragma once

#include <map>
#include <string>
#include <vector>

#include "pfdet/geometry.hpp"

namespace pfdet {

// A detection or ground-truth box attributed to a sample.
struct SampleBox {
    std::string sample_id;
    DetectionBox box;
};

using BoxSet = std::vector<SampleBox>;

struct MetricsReport {
    double map = 0.0;
    std::map<int, double> per_class_ap;  // mean over IoU thresholds
    double ate = 0.0;  // mean matched center distance, grid units
    double ase = 0.0;  // mean 1 - aligned IoU
    double aoe = 0.0;  // mean absolute yaw difference, radians
    double composite = 0.0;
    uint64_t seed = 0;
    std::string config_hash;
    int stage_id = 0;

    std::string to_json_text(int indent = 2) const;
    static MetricsReport from_json_text(const std::string& text);
};

inline std::vector<double> default_iou_thresholds() { return {0.3, 0.5, 0.7}; }

// Greedy score-descending one-to-one matching per class and threshold with
// rotated BEV IoU; AP is the area under the interpolated precision envelope.
// TP error terms are averaged over pairs matched at IoU 0.5; with no matches
// they sit at their worst-case caps.
MetricsReport compute_map(const BoxSet& preds, const BoxSet& gts,
                          const std::vector<double>& iou_thresholds);

// composite = (4*mAP + sum_e (1 - min(1, e_n))) / 7 with ate normalized by
// grid_diagonal/10 and aoe by pi. A desk-scale stand-in for a detection
// score; not the nuScenes formula.
double compute_composite(const MetricsReport& m, double grid_diagonal);

// Newline record: sample_id class cx cy sx sy yaw score, fixed 6 decimals.
std::string format_prediction_line(const SampleBox& p);

}  // namespace pfdet
