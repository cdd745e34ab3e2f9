#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tmr/box.hpp"
#include "tmr/grid.hpp"

namespace tmr {

struct MarginConfig {
    double delta = 0.33;
};

enum class LossReduction { mean, sum };

std::string to_string(LossReduction r);
LossReduction parse_loss_reduction(const std::string& s);

/// Per-cell training targets for one (image, pattern) pair.
struct TargetMaps {
    Grid3d presence;    ///< H x W x 1, 1 on the extended center set
    Grid3d box_target;  ///< H x W x 4 assigned GT box in pixels, zero where negative
    std::vector<int> assignment;  ///< GT index per cell (row-major), -1 when negative
    int positives = 0;
};

/// Cell (x, y) is positive iff some GT satisfies |x_c - x|/w + |y_c - y|/h <= delta, everything
/// in feature units with cell centers at (x + 0.5, y + 0.5). The cell is assigned to the GT with
/// the smallest such value; ties go to the lower index.
TargetMaps extended_center_set(std::span<const BoxXYWH> gt, double stride, int height, int width,
                               double delta = MarginConfig{}.delta);

inline constexpr double kProbabilityClamp = 1e-7;

template <typename T>
struct LossValue {
    double value = 0.0;
    Grid3<T> grad;
    /// Presence: number of predictions moved by the probability clamp.
    /// Box: 1 when the map had no positive cell (loss is then 0).
    int flagged = 0;
};

/// Binary cross-entropy between presence scores and targets. Probabilities are clamped to
/// [1e-7, 1 - 1e-7]; the gradient is w.r.t. the (unclamped) scores.
template <typename T>
LossValue<T> presence_loss(const Grid3<T>& pred, const TargetMaps& target, LossReduction reduction = LossReduction::mean);

/// Generalized IoU in (-1, 1].
double giou(const BoxXYWH& a, const BoxXYWH& b);

struct GiouGrad {
    double value = 0.0;
    std::array<double, 4> d_pred{};  ///< d giou / d(cx, cy, w, h) of the first box
};

/// gIoU with its gradient w.r.t. `pred`. At kinks (touching edges, equal coordinates) the
/// one-sided derivative that treats the tie as not-yet-crossed is used.
GiouGrad giou_with_grad(const BoxXYWH& pred, const BoxXYWH& target);

/// Sum (or mean over positive cells) of 1 - gIoU(decoded(x, y), assigned GT).
template <typename T>
LossValue<T> box_loss(const Grid3<T>& decoded, const TargetMaps& target, LossReduction reduction = LossReduction::mean);

/// L_P + L_B; throws NumericError naming the offending component when either is non-finite.
double total_loss(double presence_term, double box_term);

}  // namespace tmr
