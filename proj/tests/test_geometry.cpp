#include "doctest.h"

#include <cmath>
#include <random>

#include "pfdet/geometry.hpp"

using namespace pfdet;

namespace {

// Monte-Carlo intersection oracle: sample points inside box a, count how many
// also fall inside b. Independent of the polygon-clipping path.
double mc_intersection(const DetectionBox& a, const DetectionBox& b, int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-0.5, 0.5), uy(-0.5, 0.5);
    auto inside = [](const DetectionBox& box, double px, double py) {
        const double dx = px - box.center_x, dy = py - box.center_y;
        const double c = std::cos(box.yaw), s = std::sin(box.yaw);
        const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
        return std::abs(lx) <= 0.5 * box.size_x && std::abs(ly) <= 0.5 * box.size_y;
    };
    int hits = 0;
    const double ca = std::cos(a.yaw), sa = std::sin(a.yaw);
    for (int i = 0; i < n; ++i) {
        const double lx = ux(rng) * a.size_x, ly = uy(rng) * a.size_y;
        const double px = a.center_x + ca * lx - sa * ly;
        const double py = a.center_y + sa * lx + ca * ly;
        if (inside(b, px, py)) ++hits;
    }
    return a.size_x * a.size_y * hits / static_cast<double>(n);
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("axis-aligned IoU matches closed form") {
    DetectionBox a{0, 0.0, 0.0, 4.0, 2.0, 0.0, 0.0};
    DetectionBox b{0, 2.0, 0.0, 4.0, 2.0, 0.0, 0.0};
    // overlap = 2x2 = 4, union = 8+8-4 = 12
    CHECK(rotated_iou(a, b) == doctest::Approx(4.0 / 12.0).epsilon(1e-12));

    DetectionBox c = a;
    CHECK(rotated_iou(a, c) == doctest::Approx(1.0).epsilon(1e-12));

    DetectionBox d{0, 100.0, 0.0, 1.0, 1.0, 0.0, 0.0};
    CHECK(rotated_iou(a, d) == doctest::Approx(0.0));
}

TEST_CASE("45-degree cross has analytic intersection") {
    // Unit square vs the same square rotated 45 degrees: intersection is a
    // regular octagon with area 8*(sqrt(2)-1).
    DetectionBox a{0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0};
    DetectionBox b{0, 0.0, 0.0, 2.0, 2.0, M_PI / 4.0, 0.0};
    CHECK(rotated_intersection_area(a, b) ==
          doctest::Approx(8.0 * (std::sqrt(2.0) - 1.0)).epsilon(1e-9));
}

TEST_CASE("clipped intersection matches Monte-Carlo oracle on random boxes") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> pos(-3.0, 3.0), sz(0.5, 4.0), ang(-M_PI, M_PI);
    for (int t = 0; t < 60; ++t) {
        DetectionBox a{0, pos(rng), pos(rng), sz(rng), sz(rng), ang(rng), 0.0};
        DetectionBox b{0, pos(rng), pos(rng), sz(rng), sz(rng), ang(rng), 0.0};
        const double exact = rotated_intersection_area(a, b);
        const double approx = mc_intersection(a, b, 200000, 1000 + t);
        CHECK(std::abs(exact - approx) < 0.08);
    }
}

TEST_CASE("intersection is symmetric") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-2.0, 2.0), sz(0.5, 3.0), ang(-M_PI, M_PI);
    for (int t = 0; t < 200; ++t) {
        DetectionBox a{0, pos(rng), pos(rng), sz(rng), sz(rng), ang(rng), 0.0};
        DetectionBox b{0, pos(rng), pos(rng), sz(rng), sz(rng), ang(rng), 0.0};
        CHECK(rotated_intersection_area(a, b) ==
              doctest::Approx(rotated_intersection_area(b, a)).epsilon(1e-9));
    }
}

TEST_CASE("aligned IoU ignores pose") {
    DetectionBox a{0, 5.0, 1.0, 4.0, 2.0, 1.0, 0.0};
    DetectionBox b{0, -3.0, 9.0, 2.0, 1.0, -2.0, 0.0};
    // inter = 2*1 = 2, union = 8+2-2 = 8
    CHECK(aligned_iou(a, b) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("nms suppresses the lower-scoring overlapping box") {
    std::vector<DetectionBox> boxes{
        {0, 5.0, 5.0, 4.0, 2.0, 0.3, 0.9},
        {1, 5.2, 5.1, 4.0, 2.0, 0.3, 0.7},    // heavy overlap with box 0
        {0, 20.0, 20.0, 4.0, 2.0, 0.0, 0.8},  // far away
    };
    REQUIRE(rotated_iou(boxes[0], boxes[1]) > 0.5);
    auto keep = nms(boxes, 0.5);
    REQUIRE(keep.size() == 2);
    CHECK(keep[0] == 0);
    CHECK(keep[1] == 2);
}

TEST_CASE("nms keeps boxes below the overlap threshold") {
    std::vector<DetectionBox> boxes{
        {0, 5.0, 5.0, 2.0, 2.0, 0.0, 0.9},
        {0, 7.5, 5.0, 2.0, 2.0, 0.0, 0.8},
    };
    REQUIRE(rotated_iou(boxes[0], boxes[1]) < 0.5);
    CHECK(nms(boxes, 0.5).size() == 2);
}

TEST_CASE("yaw distance wraps") {
    CHECK(yaw_distance(0.1, -0.1) == doctest::Approx(0.2));
    CHECK(yaw_distance(M_PI - 0.05, -M_PI + 0.05) == doctest::Approx(0.1));
    CHECK(yaw_distance(0.0, M_PI) == doctest::Approx(M_PI));
}

TEST_SUITE_END();
