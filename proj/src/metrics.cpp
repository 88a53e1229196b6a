#include "pfdet/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace pfdet {

using nlohmann::json;

namespace {

struct Matches {
    std::vector<int> pred_to_gt;  // index into gts, -1 = FP; ordered by rank
    std::vector<size_t> pred_rank;  // indices into class preds, score-descending
    int n_gt = 0;
};

// Greedy one-to-one matching for one class at one threshold.
Matches match_class(const BoxSet& preds, const BoxSet& gts, int class_id, double thr) {
    Matches m;
    std::vector<size_t> pi, gi;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i].box.class_id == class_id) pi.push_back(i);
    for (size_t i = 0; i < gts.size(); ++i)
        if (gts[i].box.class_id == class_id) gi.push_back(i);
    m.n_gt = static_cast<int>(gi.size());
    std::stable_sort(pi.begin(), pi.end(), [&](size_t a, size_t b) {
        return preds[a].box.score > preds[b].box.score;
    });
    std::vector<bool> taken(gi.size(), false);
    for (size_t p : pi) {
        int best = -1;
        double best_iou = thr;
        for (size_t k = 0; k < gi.size(); ++k) {
            if (taken[k] || gts[gi[k]].sample_id != preds[p].sample_id) continue;
            const double iou = rotated_iou(preds[p].box, gts[gi[k]].box);
            if (iou >= best_iou) {
                best_iou = iou;
                best = static_cast<int>(k);
            }
        }
        if (best >= 0) taken[best] = true;
        m.pred_rank.push_back(p);
        m.pred_to_gt.push_back(best < 0 ? -1 : static_cast<int>(gi[best]));
    }
    return m;
}

// Area under the precision envelope (all-point interpolation).
double average_precision(const std::vector<int>& pred_to_gt, int n_gt) {
    if (n_gt == 0) return 0.0;
    std::vector<double> precision, recall;
    int tp = 0;
    for (size_t k = 0; k < pred_to_gt.size(); ++k) {
        if (pred_to_gt[k] >= 0) ++tp;
        precision.push_back(tp / static_cast<double>(k + 1));
        recall.push_back(tp / static_cast<double>(n_gt));
    }
    double ap = 0.0, prev_recall = 0.0;
    for (size_t k = 0; k < precision.size(); ++k) {
        if (pred_to_gt[k] < 0) continue;
        double envelope = 0.0;
        for (size_t j = k; j < precision.size(); ++j) envelope = std::max(envelope, precision[j]);
        ap += (recall[k] - prev_recall) * envelope;
        prev_recall = recall[k];
    }
    return ap;
}

}  // namespace

MetricsReport compute_map(const BoxSet& preds, const BoxSet& gts,
                          const std::vector<double>& iou_thresholds) {
    MetricsReport report;
    std::set<int> classes;
    for (const auto& g : gts) classes.insert(g.box.class_id);

    double ap_sum = 0.0;
    for (int c : classes) {
        double class_ap = 0.0;
        for (double thr : iou_thresholds) {
            auto m = match_class(preds, gts, c, thr);
            class_ap += average_precision(m.pred_to_gt, m.n_gt);
        }
        class_ap /= static_cast<double>(iou_thresholds.size());
        report.per_class_ap[c] = class_ap;
        ap_sum += class_ap;
    }
    report.map = classes.empty() ? 0.0 : ap_sum / static_cast<double>(classes.size());

    // TP error terms over matches at IoU 0.5, pooled across classes.
    double ate = 0.0, ase = 0.0, aoe = 0.0;
    int n_matched = 0;
    for (int c : classes) {
        auto m = match_class(preds, gts, c, 0.5);
        for (size_t k = 0; k < m.pred_to_gt.size(); ++k) {
            if (m.pred_to_gt[k] < 0) continue;
            const auto& p = preds[m.pred_rank[k]].box;
            const auto& g = gts[static_cast<size_t>(m.pred_to_gt[k])].box;
            ate += std::hypot(p.center_x - g.center_x, p.center_y - g.center_y);
            ase += 1.0 - aligned_iou(p, g);
            aoe += yaw_distance(p.yaw, g.yaw);
            ++n_matched;
        }
    }
    if (n_matched > 0) {
        report.ate = ate / n_matched;
        report.ase = ase / n_matched;
        report.aoe = aoe / n_matched;
    } else {
        // worst case: every normalized error term saturates at 1
        report.ate = -1.0;  // sentinel, normalized to 1 by compute_composite
        report.ase = 1.0;
        report.aoe = M_PI;
    }
    return report;
}

double compute_composite(const MetricsReport& m, double grid_diagonal) {
    const double ate_n = m.ate < 0.0 ? 1.0 : m.ate / (grid_diagonal / 10.0);
    const double aoe_n = m.aoe / M_PI;
    double score = 4.0 * m.map;
    for (double e : {ate_n, m.ase, aoe_n}) score += 1.0 - std::min(1.0, e);
    return score / 7.0;
}

std::string MetricsReport::to_json_text(int indent) const {
    json per_class = json::object();
    for (const auto& [cls, ap] : per_class_ap) per_class[std::to_string(cls)] = ap;
    json j{{"map", map},     {"per_class_ap", per_class},
           {"ate", ate},     {"ase", ase},
           {"aoe", aoe},     {"composite", composite},
           {"seed", seed},   {"config_hash", config_hash},
           {"stage_id", stage_id}};
    return j.dump(indent);
}

MetricsReport MetricsReport::from_json_text(const std::string& text) {
    json j = json::parse(text);
    MetricsReport m;
    m.map = j.at("map");
    for (const auto& [k, v] : j.at("per_class_ap").items())
        m.per_class_ap[std::stoi(k)] = v.get<double>();
    m.ate = j.at("ate");
    m.ase = j.at("ase");
    m.aoe = j.at("aoe");
    m.composite = j.at("composite");
    m.seed = j.at("seed");
    m.config_hash = j.at("config_hash");
    m.stage_id = j.at("stage_id");
    return m;
}

std::string format_prediction_line(const SampleBox& p) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s %d %.6f %.6f %.6f %.6f %.6f %.6f",
                  p.sample_id.c_str(), p.box.class_id, p.box.center_x, p.box.center_y,
                  p.box.size_x, p.box.size_y, p.box.yaw, p.box.score);
    return buf;
}

}  // namespace pfdet
