#include "tmr/loss.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

namespace tmr {

std::string to_string(LossReduction r) { return r == LossReduction::sum ? "sum" : "mean"; }

LossReduction parse_loss_reduction(const std::string& s) {
    if (s == "mean") return LossReduction::mean;
    if (s == "sum") return LossReduction::sum;
    throw ArgumentError("unknown loss reduction '" + s + "' (expected mean or sum)");
}

TargetMaps extended_center_set(std::span<const BoxXYWH> gt, double stride, int height, int width, double delta) {
    if (!(stride > 0)) throw ArgumentError("extended_center_set: stride must be positive");
    if (!(delta > 0) || delta > 0.5) throw ArgumentError("extended_center_set: delta must lie in (0, 0.5]");
    TargetMaps t;
    t.presence = Grid3d(height, width, 1);
    t.box_target = Grid3d(height, width, 4);
    t.assignment.assign(static_cast<std::size_t>(height) * width, -1);
    for (const auto& b : gt) {
        if (!b.valid()) throw ArgumentError("extended_center_set: invalid GT box " + to_string(b));
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int best = -1;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < gt.size(); ++k) {
                const double xc = gt[k].cx / stride, yc = gt[k].cy / stride;
                const double w = gt[k].w / stride, h = gt[k].h / stride;
                const double dist = std::abs(xc - (x + 0.5)) / w + std::abs(yc - (y + 0.5)) / h;
                if (dist <= delta && dist < best_dist) {
                    best = static_cast<int>(k);
                    best_dist = dist;
                }
            }
            if (best < 0) continue;
            const std::size_t cell = static_cast<std::size_t>(y) * width + x;
            t.assignment[cell] = best;
            t.presence.values[cell] = 1.0;
            const auto& b = gt[best];
            double* bt = t.box_target.values.data() + 4 * cell;
            bt[0] = b.cx, bt[1] = b.cy, bt[2] = b.w, bt[3] = b.h;
            ++t.positives;
        }
    }
    return t;
}

template <typename T>
LossValue<T> presence_loss(const Grid3<T>& pred, const TargetMaps& target, LossReduction reduction) {
    if (pred.height != target.presence.height || pred.width != target.presence.width || pred.depth != 1) {
        throw ConfigError("presence_loss: prediction " + shape_string(pred) + " vs target " +
                          shape_string(target.presence));
    }
    LossValue<T> out;
    out.grad = Grid3<T>(pred.height, pred.width, 1);
    const double n = reduction == LossReduction::mean ? static_cast<double>(pred.size()) : 1.0;
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double raw = pred.values[i];
        const double t = target.presence.values[i];
        const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
        const bool clamped = p != raw;
        if (clamped) ++out.flagged;
        total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
        out.grad.values[i] = clamped ? T(0) : static_cast<T>(((p - t) / (p * (1.0 - p))) / n);
    }
    if (out.flagged > 0) {
        spdlog::debug("presence_loss: {} scores clamped to [{}, 1-{}]", out.flagged, kProbabilityClamp,
                      kProbabilityClamp);
    }
    out.value = total / n;
    return out;
}

double giou(const BoxXYWH& a, const BoxXYWH& b) { return giou_with_grad(a, b).value; }

GiouGrad giou_with_grad(const BoxXYWH& pred, const BoxXYWH& target) {
    const double ax1 = pred.left(), ax2 = pred.right(), ay1 = pred.top(), ay2 = pred.bottom();
    const double bx1 = target.left(), bx2 = target.right(), by1 = target.top(), by2 = target.bottom();

    const double iw_raw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih_raw = std::min(ay2, by2) - std::max(ay1, by1);
    const double iw = std::max(iw_raw, 0.0), ih = std::max(ih_raw, 0.0);
    const double inter = iw * ih;
    const double area_a = pred.w * pred.h, area_b = target.w * target.h;
    const double uni = area_a + area_b - inter;
    const double cw = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double ch = std::max(ay2, by2) - std::min(ay1, by1);
    const double hull = cw * ch;

    GiouGrad g;
    g.value = inter / uni - (hull - uni) / hull;

    const double dg_dI = 1.0 / uni + inter / (uni * uni) - 1.0 / hull;
    const double dg_dA = -inter / (uni * uni) + 1.0 / hull;
    const double dg_dC = -uni / (hull * hull);

    // Intersection edges.
    const double dIw_dx1 = (iw_raw > 0 && ax1 > bx1) ? -1.0 : 0.0;
    const double dIw_dx2 = (iw_raw > 0 && ax2 < bx2) ? 1.0 : 0.0;
    const double dIh_dy1 = (ih_raw > 0 && ay1 > by1) ? -1.0 : 0.0;
    const double dIh_dy2 = (ih_raw > 0 && ay2 < by2) ? 1.0 : 0.0;
    // Hull edges.
    const double dCw_dx1 = ax1 < bx1 ? -1.0 : 0.0;
    const double dCw_dx2 = ax2 > bx2 ? 1.0 : 0.0;
    const double dCh_dy1 = ay1 < by1 ? -1.0 : 0.0;
    const double dCh_dy2 = ay2 > by2 ? 1.0 : 0.0;

    const double h = pred.h, w = pred.w;
    const double d_x1 = dg_dI * ih * dIw_dx1 + dg_dA * (-h) + dg_dC * ch * dCw_dx1;
    const double d_x2 = dg_dI * ih * dIw_dx2 + dg_dA * h + dg_dC * ch * dCw_dx2;
    const double d_y1 = dg_dI * iw * dIh_dy1 + dg_dA * (-w) + dg_dC * cw * dCh_dy1;
    const double d_y2 = dg_dI * iw * dIh_dy2 + dg_dA * w + dg_dC * cw * dCh_dy2;

    g.d_pred = {d_x1 + d_x2, d_y1 + d_y2, 0.5 * (d_x2 - d_x1), 0.5 * (d_y2 - d_y1)};
    return g;
}

template <typename T>
LossValue<T> box_loss(const Grid3<T>& decoded, const TargetMaps& target, LossReduction reduction) {
    if (decoded.height != target.box_target.height || decoded.width != target.box_target.width ||
        decoded.depth != 4) {
        throw ConfigError("box_loss: decoded " + shape_string(decoded) + " vs target " +
                          shape_string(target.box_target));
    }
    LossValue<T> out;
    out.grad = Grid3<T>(decoded.height, decoded.width, 4);
    if (target.positives == 0) {
        out.flagged = 1;
        spdlog::warn("box_loss: no positive cells, box loss is 0");
        return out;
    }
    const double n = reduction == LossReduction::mean ? static_cast<double>(target.positives) : 1.0;
    double total = 0.0;
    for (std::size_t cell = 0; cell < target.assignment.size(); ++cell) {
        if (target.assignment[cell] < 0) continue;
        const T* d = decoded.values.data() + 4 * cell;
        const double* bt = target.box_target.values.data() + 4 * cell;
        const BoxXYWH pred{d[0], d[1], d[2], d[3]};
        const BoxXYWH gt{bt[0], bt[1], bt[2], bt[3]};
        const GiouGrad g = giou_with_grad(pred, gt);
        total += 1.0 - g.value;
        T* gd = out.grad.values.data() + 4 * cell;
        for (int k = 0; k < 4; ++k) gd[k] = static_cast<T>(-g.d_pred[k] / n);
    }
    out.value = total / n;
    return out;
}

double total_loss(double presence_term, double box_term) {
    if (!std::isfinite(presence_term)) {
        throw NumericError("total_loss: presence loss is non-finite (" + std::to_string(presence_term) + ")");
    }
    if (!std::isfinite(box_term)) {
        throw NumericError("total_loss: box loss is non-finite (" + std::to_string(box_term) + ")");
    }
    return presence_term + box_term;
}

template LossValue<float> presence_loss(const Grid3<float>&, const TargetMaps&, LossReduction);
template LossValue<double> presence_loss(const Grid3<double>&, const TargetMaps&, LossReduction);
template LossValue<float> box_loss(const Grid3<float>&, const TargetMaps&, LossReduction);
template LossValue<double> box_loss(const Grid3<double>&, const TargetMaps&, LossReduction);

}  // namespace tmr
