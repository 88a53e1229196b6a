#pragma once

#include <array>
#include <vector>

namespace pfdet {

// Oriented BEV box. Center and size in grid units, yaw in radians, measured
// counter-clockwise from +x. score is unused for ground truth.
struct DetectionBox {
    int class_id = 0;
    double center_x = 0.0;
    double center_y = 0.0;
    double size_x = 1.0;
    double size_y = 1.0;
    double yaw = 0.0;
    double score = 0.0;
};

using Polygon = std::vector<std::array<double, 2>>;

Polygon box_corners(const DetectionBox& b);
double polygon_area(const Polygon& p);

// Convex clip of `subject` against convex `clip` (Sutherland-Hodgman).
Polygon clip_polygon(const Polygon& subject, const Polygon& clip);

double rotated_intersection_area(const DetectionBox& a, const DetectionBox& b);
double rotated_iou(const DetectionBox& a, const DetectionBox& b);

// IoU of the two boxes after translating and rotating them onto a common
// center and orientation (size-only overlap).
double aligned_iou(const DetectionBox& a, const DetectionBox& b);

// Greedy score-descending suppression; returns surviving indices in
// descending-score order. Class-agnostic.
std::vector<size_t> nms(const std::vector<DetectionBox>& boxes, double iou_threshold);

// Absolute yaw difference wrapped to [0, pi].
double yaw_distance(double a, double b);

}  // namespace pfdet
