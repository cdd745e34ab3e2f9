#pragma once

// Slow reference implementations, written independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tmr/box.hpp"
#include "tmr/evaluate.hpp"
#include "tmr/grid.hpp"
#include "tmr/infer.hpp"

namespace tmr::oracle {

/// Direct triple loop over (x, y, d) and the template footprint.
inline Grid3d template_match(const Grid3d& f, const Grid3d& t, double scale) {
    Grid3d out(f.height, f.width, f.depth);
    const int oy = t.height / 2;
    const int ox = t.width / 2;
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            for (int d = 0; d < f.depth; ++d) {
                double s = 0.0;
                for (int ty = 0; ty < t.height; ++ty) {
                    for (int tx = 0; tx < t.width; ++tx) {
                        const int yy = y + ty - oy;
                        const int xx = x + tx - ox;
                        if (yy < 0 || xx < 0 || yy >= f.height || xx >= f.width) continue;
                        s += f.at(yy, xx, d) * t.at(ty, tx, d);
                    }
                }
                out.at(y, x, d) = scale * s / (t.height * t.width);
            }
        }
    }
    return out;
}

/// Positive-cell test straight from the rhombus inequality, evaluated cell by cell.
inline bool in_center_set(const std::vector<BoxXYWH>& gt, double stride, int x, int y, double delta) {
    for (const auto& g : gt) {
        const double cx = g.cx / stride;
        const double cy = g.cy / stride;
        const double w = g.w / stride;
        const double h = g.h / stride;
        if (std::abs(cx - (x + 0.5)) / w + std::abs(cy - (y + 0.5)) / h <= delta) return true;
    }
    return false;
}

/// O(n^2) NMS: a box survives iff no higher-ranked survivor overlaps it by >= thresh.
/// Survival is decided in rank order, recomputing the survivor set from scratch each time.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double thresh) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    const auto before = [&](std::size_t a, std::size_t b) {
        const Detection& p = dets[a];
        const Detection& q = dets[b];
        if (p.score != q.score) return p.score > q.score;
        if (p.cell_index != q.cell_index) return p.cell_index < q.cell_index;
        if (p.exemplar_id != q.exemplar_id) return p.exemplar_id < q.exemplar_id;
        if (p.scale_id != q.scale_id) return p.scale_id < q.scale_id;
        return a < b;
    };
    std::vector<bool> keep(dets.size(), false);
    std::sort(order.begin(), order.end(), before);
    for (std::size_t r = 0; r < order.size(); ++r) {
        bool ok = true;
        for (std::size_t s = 0; s < r && ok; ++s) {
            if (keep[order[s]] && iou(dets[order[s]].box, dets[order[r]].box) >= thresh) ok = false;
        }
        keep[order[r]] = ok;
    }
    std::vector<Detection> out;
    for (std::size_t idx : order) {
        if (keep[idx]) out.push_back(dets[idx]);
    }
    return out;
}

/// AP at one threshold with an explicit IoU table and the interpolated precision
/// max_{recall' >= r} precision(recall') evaluated by scanning every rank for each r.
inline double average_precision(const std::vector<EvalQuery>& queries, double thr) {
    struct Det {
        double score;
        std::size_t q;
        std::size_t i;
    };
    std::vector<Det> dets;
    std::size_t total = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        total += queries[q].gt.size();
        for (std::size_t i = 0; i < queries[q].boxes.size(); ++i) dets.push_back({queries[q].scores[i], q, i});
    }
    if (total == 0) return 0.0;
    // Insertion sort: stable by construction.
    for (std::size_t a = 1; a < dets.size(); ++a) {
        for (std::size_t b = a; b > 0 && dets[b - 1].score < dets[b].score; --b) std::swap(dets[b - 1], dets[b]);
    }
    std::vector<std::vector<bool>> used(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) used[q].assign(queries[q].gt.size(), false);
    std::vector<std::size_t> tp_at(dets.size());
    std::size_t tp = 0;
    for (std::size_t r = 0; r < dets.size(); ++r) {
        const auto& q = queries[dets[r].q];
        std::vector<double> ious(q.gt.size());
        for (std::size_t g = 0; g < q.gt.size(); ++g) ious[g] = iou(q.boxes[dets[r].i], q.gt[g]);
        std::ptrdiff_t pick = -1;
        for (std::size_t g = 0; g < q.gt.size(); ++g) {
            if (used[dets[r].q][g] || ious[g] < thr) continue;
            if (pick < 0 || ious[g] > ious[static_cast<std::size_t>(pick)]) pick = static_cast<std::ptrdiff_t>(g);
        }
        if (pick >= 0) {
            used[dets[r].q][static_cast<std::size_t>(pick)] = true;
            ++tp;
        }
        tp_at[r] = tp;
    }
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
        double best = 0.0;
        for (std::size_t r = 0; r < dets.size(); ++r) {
            // recall >= k/100 compared exactly in integers
            if (tp_at[r] * 100 >= static_cast<std::size_t>(k) * total) {
                best = std::max(best, static_cast<double>(tp_at[r]) / static_cast<double>(r + 1));
            }
        }
        sum += best;
    }
    return sum / 101.0;
}

/// Random box with corners on a coarse grid so that exact ties and touching edges occur.
inline BoxXYWH random_box(std::mt19937_64& rng, double extent = 100.0, double max_size = 40.0) {
    std::uniform_real_distribution<double> pos(0.0, extent);
    std::uniform_real_distribution<double> size(1.0, max_size);
    return {pos(rng), pos(rng), size(rng), size(rng)};
}

}  // namespace tmr::oracle
