#include "pfdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfdet {

Polygon box_corners(const DetectionBox& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hx = 0.5 * b.size_x, hy = 0.5 * b.size_y;
    Polygon p(4);
    const double dx[4] = {+hx, -hx, -hx, +hx};
    const double dy[4] = {+hy, +hy, -hy, -hy};
    for (int i = 0; i < 4; ++i) {
        p[i] = {b.center_x + c * dx[i] - s * dy[i], b.center_y + s * dx[i] + c * dy[i]};
    }
    return p;
}

double polygon_area(const Polygon& p) {
    if (p.size() < 3) return 0.0;
    double a = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u[0] * v[1] - v[0] * u[1];
    }
    return std::abs(a) * 0.5;
}

namespace {
// Signed distance of p from the directed edge a->b (CCW inside > 0). Points
// within a sliver of the edge count as inside, so a box clipped against
// itself survives floating-point corner noise.
double edge_distance(const std::array<double, 2>& a, const std::array<double, 2>& b,
                     const std::array<double, 2>& p) {
    const double cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
    return len > 0.0 ? cross / len : 0.0;
}

constexpr double kEdgeEps = 1e-9;

std::array<double, 2> intersect(const std::array<double, 2>& a, const std::array<double, 2>& b,
                                const std::array<double, 2>& p, const std::array<double, 2>& q) {
    const double a1 = b[1] - a[1], b1 = a[0] - b[0];
    const double c1 = a1 * a[0] + b1 * a[1];
    const double a2 = q[1] - p[1], b2 = p[0] - q[0];
    const double c2 = a2 * p[0] + b2 * p[1];
    const double det = a1 * b2 - a2 * b1;
    const double scale = std::abs(a1) + std::abs(b1) + std::abs(a2) + std::abs(b2);
    if (std::abs(det) <= 1e-12 * scale * scale) {
        // nearly parallel: p and q are both within the edge tolerance
        return {0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])};
    }
    return {(b2 * c1 - b1 * c2) / det, (a1 * c2 - a2 * c1) / det};
}

// Ensures counter-clockwise orientation so the inside test is consistent.
Polygon ccw(Polygon p) {
    double a = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u[0] * v[1] - v[0] * u[1];
    }
    if (a < 0.0) std::reverse(p.begin(), p.end());
    return p;
}
}  // namespace

Polygon clip_polygon(const Polygon& subject, const Polygon& clip) {
    Polygon out = subject;
    const Polygon c = ccw(clip);
    for (size_t i = 0; i < c.size() && !out.empty(); ++i) {
        const auto& ca = c[i];
        const auto& cb = c[(i + 1) % c.size()];
        Polygon in = std::move(out);
        out.clear();
        for (size_t j = 0; j < in.size(); ++j) {
            const auto& p = in[j];
            const auto& q = in[(j + 1) % in.size()];
            const double tol_p = -kEdgeEps * (1.0 + std::abs(p[0]) + std::abs(p[1]));
            const double tol_q = -kEdgeEps * (1.0 + std::abs(q[0]) + std::abs(q[1]));
            const bool pin = edge_distance(ca, cb, p) >= tol_p;
            const bool qin = edge_distance(ca, cb, q) >= tol_q;
            if (pin) {
                out.push_back(p);
                if (!qin) out.push_back(intersect(ca, cb, p, q));
            } else if (qin) {
                out.push_back(intersect(ca, cb, p, q));
            }
        }
    }
    return out;
}

double rotated_intersection_area(const DetectionBox& a, const DetectionBox& b) {
    const double inter = polygon_area(clip_polygon(box_corners(a), box_corners(b)));
    return std::min({inter, a.size_x * a.size_y, b.size_x * b.size_y});
}

double rotated_iou(const DetectionBox& a, const DetectionBox& b) {
    const double inter = rotated_intersection_area(a, b);
    const double ua = a.size_x * a.size_y + b.size_x * b.size_y - inter;
    return ua <= 0.0 ? 0.0 : inter / ua;
}

double aligned_iou(const DetectionBox& a, const DetectionBox& b) {
    const double ix = std::min(a.size_x, b.size_x);
    const double iy = std::min(a.size_y, b.size_y);
    const double inter = ix * iy;
    const double ua = a.size_x * a.size_y + b.size_x * b.size_y - inter;
    return ua <= 0.0 ? 0.0 : inter / ua;
}

std::vector<size_t> nms(const std::vector<DetectionBox>& boxes, double iou_threshold) {
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return boxes[a].score > boxes[b].score; });
    std::vector<size_t> keep;
    std::vector<bool> dead(boxes.size(), false);
    for (size_t oi = 0; oi < order.size(); ++oi) {
        const size_t i = order[oi];
        if (dead[i]) continue;
        keep.push_back(i);
        for (size_t oj = oi + 1; oj < order.size(); ++oj) {
            const size_t j = order[oj];
            if (!dead[j] && rotated_iou(boxes[i], boxes[j]) > iou_threshold) dead[j] = true;
        }
    }
    return keep;
}

double yaw_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), 2.0 * M_PI);
    if (d > M_PI) d = 2.0 * M_PI - d;
    return d;
}

}  // namespace pfdet
