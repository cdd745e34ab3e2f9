#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tmr/grid.hpp"
#include "tmr/layers.hpp"

namespace tmr {

/// A block of double-precision values together with the analytic gradient of the loss w.r.t. them.
struct GradTarget {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradCheckOptions {
    double step = 1e-4;
    /// 0 checks every entry; otherwise a seeded random subset of this many entries per target.
    std::size_t max_entries_per_target = 0;
    std::uint64_t seed = 0;
    /// Optional: identifies the smooth piece the most recent loss evaluation landed on (for
    /// instance the sign pattern of every LeakyReLU input). Entries whose +h or -h evaluation
    /// changes the piece straddle a kink; they are skipped and counted instead of compared.
    std::function<std::vector<std::uint8_t>()> piece_signature;
};

struct TargetError {
    std::string name;
    double rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

/// Relative error of a target is ||a - n|| / max(||a||, ||n||) over the checked entries
/// (a analytic, n central difference); both norms below 1e-12 count as agreement.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_target;
    std::vector<TargetError> targets;

    [[nodiscard]] bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Central finite differences of `loss` against the analytic gradients in `targets`.
/// `loss` must read the current contents of the target spans. Values are restored afterwards.
/// Throws NumericError when the loss evaluates to a non-finite number.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options = {});

/// Targets for a layer's weights and bias (bias skipped when empty).
void append_targets(std::vector<GradTarget>& out, LayerParams<double>& p);
void append_target(std::vector<GradTarget>& out, std::string name, Grid3d& values, const Grid3d& grad);

}  // namespace tmr
