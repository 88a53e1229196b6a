#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "pfdet/metrics.hpp"
#include "pr_oracle.hpp"

using namespace pfdet;

namespace {

using pftest::oracle_ap;
using pftest::oracle_map;

BoxSet random_boxes(std::mt19937_64& rng, int n, int classes, bool scored,
                    const std::string& sample_prefix = "s", int samples = 2) {
    return pftest::oracle_random_boxes(rng, n, classes, scored, sample_prefix, samples);
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect detector scores mAP 1.0") {
    std::mt19937_64 rng(2);
    BoxSet gts = random_boxes(rng, 6, 3, false);
    BoxSet preds = gts;
    for (auto& p : preds) p.box.score = 1.0;
    auto m = compute_map(preds, gts, default_iou_thresholds());
    CHECK(m.map == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.ate == doctest::Approx(0.0));
    CHECK(m.ase == doctest::Approx(0.0));
    CHECK(m.aoe == doctest::Approx(0.0));
}

TEST_CASE("no predictions scores mAP 0.0 with worst-case error terms") {
    std::mt19937_64 rng(3);
    BoxSet gts = random_boxes(rng, 5, 3, false);
    auto m = compute_map({}, gts, default_iou_thresholds());
    CHECK(m.map == 0.0);
    const double comp = compute_composite(m, std::hypot(36.0, 36.0));
    CHECK(comp == doctest::Approx(0.0));
}

TEST_CASE("empty ground truth is handled") {
    std::mt19937_64 rng(4);
    BoxSet preds = random_boxes(rng, 4, 2, true);
    auto m = compute_map(preds, {}, default_iou_thresholds());
    CHECK(m.map == 0.0);
}

TEST_CASE("hand case: 2 TP, 1 FP, 1 FN matches the brute-force oracle") {
    BoxSet gts{
        {"a", {0, 5.0, 5.0, 4.0, 2.0, 0.0, 0.0}},
        {"a", {0, 12.0, 5.0, 4.0, 2.0, 0.5, 0.0}},
        {"a", {0, 5.0, 12.0, 4.0, 2.0, 1.0, 0.0}},  // never matched
    };
    BoxSet preds{
        {"a", {0, 5.1, 5.0, 4.0, 2.0, 0.0, 0.9}},    // TP
        {"a", {0, 12.1, 5.1, 4.0, 2.0, 0.5, 0.8}},   // TP
        {"a", {0, 16.0, 16.0, 4.0, 2.0, 0.0, 0.7}},  // FP
    };
    auto m = compute_map(preds, gts, {0.5});
    const double oracle = oracle_map(preds, gts, {0.5});
    CHECK(m.map == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(m.map == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("random instances match the brute-force PR oracle to 1e-9") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 60; ++t) {
        BoxSet gts = random_boxes(rng, 1 + static_cast<int>(rng() % 8), 3, false);
        BoxSet preds = random_boxes(rng, static_cast<int>(rng() % 9), 3, true);
        auto m = compute_map(preds, gts, default_iou_thresholds());
        const double oracle = oracle_map(preds, gts, default_iou_thresholds());
        CHECK(std::abs(m.map - oracle) < 1e-9);
    }
}

TEST_CASE("adding a confident true positive never lowers mAP") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 40; ++t) {
        BoxSet gts = random_boxes(rng, 2 + static_cast<int>(rng() % 6), 2, false);
        BoxSet preds = random_boxes(rng, static_cast<int>(rng() % 6), 2, true);
        auto before = compute_map(preds, gts, default_iou_thresholds());
        // clone an unmatched gt as a new prediction scored above everything
        BoxSet augmented = preds;
        SampleBox extra = gts[rng() % gts.size()];
        extra.box.score = 2.0;
        augmented.push_back(extra);
        auto after = compute_map(augmented, gts, default_iou_thresholds());
        CHECK(after.map >= before.map - 1e-12);
        CHECK(std::abs(after.map - oracle_map(augmented, gts, default_iou_thresholds())) <
              1e-9);
    }
}

TEST_CASE("composite formula: bounds and the worked example") {
    MetricsReport m;
    m.map = 1.0;
    m.ate = 0.0;
    m.ase = 0.0;
    m.aoe = 0.0;
    CHECK(compute_composite(m, 50.0) == doctest::Approx(1.0));

    m.map = 0.0;
    m.ate = 1e9;
    m.ase = 1.0;
    m.aoe = M_PI;
    CHECK(compute_composite(m, 50.0) == doctest::Approx(0.0));

    // mAP=0.5, ate_n=0.2, ase=0.1, aoe_n=0.3 -> (2 + 0.8 + 0.9 + 0.7)/7
    const double diag = 50.0;
    m.map = 0.5;
    m.ate = 0.2 * (diag / 10.0);
    m.ase = 0.1;
    m.aoe = 0.3 * M_PI;
    CHECK(compute_composite(m, diag) == doctest::Approx(4.4 / 7.0).epsilon(1e-12));
}

TEST_CASE("composite is recomputable from the stored report") {
    std::mt19937_64 rng(7);
    BoxSet gts = random_boxes(rng, 6, 3, false);
    BoxSet preds = random_boxes(rng, 6, 3, true);
    auto m = compute_map(preds, gts, default_iou_thresholds());
    const double diag = std::hypot(36.0, 36.0);
    m.composite = compute_composite(m, diag);
    auto text = m.to_json_text();
    auto loaded = MetricsReport::from_json_text(text);
    CHECK(compute_composite(loaded, diag) == doctest::Approx(m.composite).epsilon(1e-12));
}

TEST_CASE("prediction dump lines use fixed six-decimal formatting") {
    SampleBox p{"val_000003", {2, 1.5, 2.25, 4.0, 2.0, -0.75, 0.125}};
    CHECK(format_prediction_line(p) ==
          "val_000003 2 1.500000 2.250000 4.000000 2.000000 -0.750000 0.125000");
}

TEST_SUITE_END();
