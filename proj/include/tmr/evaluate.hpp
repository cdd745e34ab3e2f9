#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmr/annotation.hpp"

namespace tmr {

struct MetricSet {
    double ap = 0.0;    ///< mean over IoU 0.50:0.05:0.95
    double ap50 = 0.0;
    double ap75 = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    int queries = 0;
};

struct EvalReport {
    MetricSet overall;
    /// Same metrics restricted to queries of one pattern id.
    std::map<int, MetricSet> per_pattern;
};

/// One (image, pattern) query: ground truth and scored predictions.
struct EvalQuery {
    std::vector<BoxXYWH> gt;
    std::vector<BoxXYWH> boxes;
    std::vector<double> scores;
    int pattern = 0;
};

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> iou_thresholds();

/// Single-class AP at one IoU threshold, pooled over queries: detections ranked by score,
/// each matched to the unmatched GT of its query with the highest IoU >= threshold,
/// precision interpolated at 101 recall points.
double average_precision(std::span<const EvalQuery> queries, double iou_threshold);

MetricSet compute_metrics(std::span<const EvalQuery> queries);

/// Aligns predictions with ground truth by (image, pattern). Queries without predictions
/// count as empty. Throws ArgumentError on duplicate samples or predictions for an
/// unknown query.
EvalReport evaluate(std::span<const PredictionSet> preds, std::span<const SampleAnnotation> gts);

nlohmann::json to_json(const MetricSet& m);
nlohmann::json to_json(const EvalReport& r);

}  // namespace tmr
