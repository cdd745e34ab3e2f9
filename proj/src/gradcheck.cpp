#include "tmr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tmr/errors.hpp"

namespace tmr {

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options) {
    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    std::vector<std::uint8_t> base_piece;
    if (options.piece_signature) {
        loss();
        base_piece = options.piece_signature();
    }
    for (const GradTarget& t : targets) {
        if (t.values.size() != t.analytic.size()) {
            throw ConfigError("grad_check: target '" + t.name + "' has mismatched gradient size");
        }
        std::vector<std::size_t> idx(t.values.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (options.max_entries_per_target > 0 && idx.size() > options.max_entries_per_target) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_entries_per_target);
            std::sort(idx.begin(), idx.end());
        }
        double diff2 = 0, a2 = 0, n2 = 0, max_abs = 0;
        std::size_t skipped = 0;
        for (std::size_t i : idx) {
            const double saved = t.values[i];
            t.values[i] = saved + options.step;
            const double up = loss();
            const bool up_same = !options.piece_signature || options.piece_signature() == base_piece;
            t.values[i] = saved - options.step;
            const double down = loss();
            const bool down_same = !options.piece_signature || options.piece_signature() == base_piece;
            t.values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: non-finite loss while perturbing '" + t.name + "'[" +
                                   std::to_string(i) + "]");
            }
            if (!up_same || !down_same) {
                ++skipped;
                continue;
            }
            const double numeric = (up - down) / (2.0 * options.step);
            const double analytic = t.analytic[i];
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            max_abs = std::max(max_abs, std::abs(analytic - numeric));
        }
        const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
        TargetError err{t.name, 0.0, max_abs, idx.size() - skipped, skipped};
        if (scale > 1e-12) err.rel_error = std::sqrt(diff2) / scale;
        if (report.worst_target.empty() || err.rel_error > report.max_rel_error) {
            report.max_rel_error = err.rel_error;
            report.worst_target = t.name;
        }
        report.targets.push_back(std::move(err));
    }
    return report;
}

void append_targets(std::vector<GradTarget>& out, LayerParams<double>& p) {
    out.push_back({p.name + ".weight", p.weights, p.grad_weights});
    if (!p.bias.empty()) out.push_back({p.name + ".bias", p.bias, p.grad_bias});
}

void append_target(std::vector<GradTarget>& out, std::string name, Grid3d& values, const Grid3d& grad) {
    out.push_back({std::move(name), values.values, grad.values});
}

}  // namespace tmr
