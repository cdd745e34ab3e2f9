#include "tmr/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "tmr/errors.hpp"

namespace tmr {

namespace {

constexpr int kRecallPoints = 101;

struct RankedDet {
    double score;
    std::size_t query;
    std::size_t index;
};

}  // namespace

std::vector<double> iou_thresholds() {
    std::vector<double> out;
    for (int k = 0; k < 10; ++k) out.push_back((50 + 5 * k) / 100.0);
    return out;
}

double average_precision(std::span<const EvalQuery> queries, double iou_threshold) {
    std::vector<RankedDet> dets;
    std::size_t total_gt = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        total_gt += queries[q].gt.size();
        for (std::size_t i = 0; i < queries[q].boxes.size(); ++i) dets.push_back({queries[q].scores[i], q, i});
    }
    if (total_gt == 0) return 0.0;
    std::stable_sort(dets.begin(), dets.end(), [](const RankedDet& a, const RankedDet& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) taken[q].assign(queries[q].gt.size(), false);

    std::vector<double> precision;
    std::vector<double> recall;
    std::size_t tp = 0;
    for (std::size_t r = 0; r < dets.size(); ++r) {
        const EvalQuery& q = queries[dets[r].query];
        const BoxXYWH& box = q.boxes[dets[r].index];
        double best = -1.0;
        std::ptrdiff_t best_gt = -1;
        for (std::size_t g = 0; g < q.gt.size(); ++g) {
            if (taken[dets[r].query][g]) continue;
            const double v = iou(box, q.gt[g]);
            if (v >= iou_threshold && v > best) {
                best = v;
                best_gt = static_cast<std::ptrdiff_t>(g);
            }
        }
        if (best_gt >= 0) {
            taken[dets[r].query][static_cast<std::size_t>(best_gt)] = true;
            ++tp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }
    // Precision envelope, then sample at recall 0, 0.01, ..., 1.
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int k = 0; k < kRecallPoints; ++k) {
        const double r = k / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / kRecallPoints;
}

MetricSet compute_metrics(std::span<const EvalQuery> queries) {
    MetricSet m;
    m.queries = static_cast<int>(queries.size());
    if (queries.empty()) return m;
    const std::vector<double> ts = iou_thresholds();
    double sum = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const double ap = average_precision(queries, ts[k]);
        sum += ap;
        if (k == 0) m.ap50 = ap;
        if (k == 5) m.ap75 = ap;
    }
    m.ap = sum / static_cast<double>(ts.size());
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (const auto& q : queries) {
        const double err = std::abs(static_cast<double>(q.boxes.size()) - static_cast<double>(q.gt.size()));
        abs_sum += err;
        sq_sum += err * err;
    }
    m.mae = abs_sum / static_cast<double>(queries.size());
    m.rmse = std::sqrt(sq_sum / static_cast<double>(queries.size()));
    return m;
}

EvalReport evaluate(std::span<const PredictionSet> preds, std::span<const SampleAnnotation> gts) {
    std::map<std::pair<std::string, int>, std::size_t> index;
    std::vector<EvalQuery> queries;
    std::set<std::string> images;
    for (const auto& s : gts) {
        if (!images.insert(s.image).second) throw ArgumentError("duplicate sample id \"" + s.image + "\"");
        for (const auto& p : s.patterns) {
            if (!index.emplace(std::make_pair(s.image, p.id), queries.size()).second) {
                throw ArgumentError("duplicate pattern " + std::to_string(p.id) + " in sample \"" + s.image + "\"");
            }
            EvalQuery q;
            q.gt = p.boxes;
            q.pattern = p.id;
            queries.push_back(std::move(q));
        }
    }
    std::set<std::pair<std::string, int>> seen;
    for (const auto& p : preds) {
        const auto key = std::make_pair(p.image, p.pattern);
        const auto it = index.find(key);
        if (it == index.end()) {
            throw ArgumentError("predictions for unknown query (\"" + p.image + "\", pattern " +
                                std::to_string(p.pattern) + ")");
        }
        if (!seen.insert(key).second) {
            throw ArgumentError("duplicate predictions for (\"" + p.image + "\", pattern " + std::to_string(p.pattern) +
                                ")");
        }
        if (p.scores.size() != p.boxes.size()) throw ArgumentError("prediction boxes and scores differ in length");
        queries[it->second].boxes = p.boxes;
        queries[it->second].scores = p.scores;
    }

    EvalReport report;
    report.overall = compute_metrics(queries);
    std::map<int, std::vector<EvalQuery>> by_pattern;
    for (const auto& q : queries) by_pattern[q.pattern].push_back(q);
    for (const auto& [id, qs] : by_pattern) report.per_pattern[id] = compute_metrics(qs);
    return report;
}

nlohmann::json to_json(const MetricSet& m) {
    return {{"AP", m.ap}, {"AP50", m.ap50}, {"AP75", m.ap75}, {"MAE", m.mae}, {"RMSE", m.rmse}, {"queries", m.queries}};
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j = to_json(r.overall);
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, m] : r.per_pattern) per[std::to_string(id)] = to_json(m);
    j["per_pattern"] = per;
    return j;
}

}  // namespace tmr
