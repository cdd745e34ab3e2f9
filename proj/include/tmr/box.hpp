#pragma once

#include <algorithm>
#include <cmath>
#include <string>

namespace tmr {

/// Axis-aligned box by center and size, in image pixels unless stated otherwise.
struct BoxXYWH {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double left() const { return cx - 0.5 * w; }
    [[nodiscard]] double right() const { return cx + 0.5 * w; }
    [[nodiscard]] double top() const { return cy - 0.5 * h; }
    [[nodiscard]] double bottom() const { return cy + 0.5 * h; }
    [[nodiscard]] double area() const { return w * h; }
    [[nodiscard]] bool valid() const {
        return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0 && h > 0;
    }

    static BoxXYWH from_corners(double x0, double y0, double x1, double y1) {
        return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }

    bool operator==(const BoxXYWH&) const = default;
};

inline double intersection_area(const BoxXYWH& a, const BoxXYWH& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
    return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

inline double iou(const BoxXYWH& a, const BoxXYWH& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Clip to [0, width] x [0, height]; a box fully outside collapses to zero size at the border.
inline BoxXYWH clamp_to_image(const BoxXYWH& b, double width, double height) {
    const double x0 = std::clamp(b.left(), 0.0, width);
    const double x1 = std::clamp(b.right(), 0.0, width);
    const double y0 = std::clamp(b.top(), 0.0, height);
    const double y1 = std::clamp(b.bottom(), 0.0, height);
    return BoxXYWH::from_corners(x0, y0, x1, y1);
}

inline std::string to_string(const BoxXYWH& b) {
    return "(" + std::to_string(b.cx) + ", " + std::to_string(b.cy) + ", " + std::to_string(b.w) + ", " +
           std::to_string(b.h) + ")";
}

}  // namespace tmr
