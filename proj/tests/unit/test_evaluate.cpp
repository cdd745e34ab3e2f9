#include <gtest/gtest.h>

#include <random>

#include "../oracles.hpp"
#include "tmr/errors.hpp"
#include "tmr/evaluate.hpp"

namespace tmr {
namespace {

EvalQuery query(std::vector<BoxXYWH> gt, std::vector<BoxXYWH> boxes, std::vector<double> scores) {
    return {std::move(gt), std::move(boxes), std::move(scores), 0};
}

TEST(Metrics, PerfectPredictionsScoreOne) {
    const std::vector<BoxXYWH> gt{{10, 10, 8, 8}, {30, 30, 8, 8}};
    const std::vector<EvalQuery> qs{query(gt, gt, {0.9, 0.8})};
    const MetricSet m = compute_metrics(qs);
    EXPECT_DOUBLE_EQ(m.ap, 1.0);
    EXPECT_DOUBLE_EQ(m.ap50, 1.0);
    EXPECT_DOUBLE_EQ(m.ap75, 1.0);
    EXPECT_DOUBLE_EQ(m.mae, 0.0);
}

TEST(Metrics, NoPredictionsScoreZeroAndCountEveryMiss) {
    const std::vector<EvalQuery> qs{query({{10, 10, 8, 8}, {30, 30, 8, 8}}, {}, {})};
    const MetricSet m = compute_metrics(qs);
    EXPECT_DOUBLE_EQ(m.ap, 0.0);
    EXPECT_DOUBLE_EQ(m.mae, 2.0);
    EXPECT_DOUBLE_EQ(m.rmse, 2.0);
}

TEST(Metrics, SinglePairAtIouPointSixPassesHalfTheThresholds) {
    // Same height, shifted so that IoU = 0.6: overlap 6 of 8 wide -> 48 / (64 + 64 - 48) = 0.6.
    const BoxXYWH gt{10, 10, 8, 8};
    const BoxXYWH pred{12, 10, 8, 8};
    ASSERT_NEAR(iou(gt, pred), 0.6, 1e-12);
    const std::vector<EvalQuery> qs{query({gt}, {pred}, {0.7})};
    const MetricSet m = compute_metrics(qs);
    EXPECT_DOUBLE_EQ(m.ap50, 1.0);
    EXPECT_DOUBLE_EQ(m.ap75, 0.0);
    EXPECT_NEAR(m.ap, 0.3, 1e-12);
}

TEST(Metrics, FalsePositiveRankedFirstHalvesPrecision) {
    const BoxXYWH gt{10, 10, 8, 8};
    const std::vector<EvalQuery> qs{query({gt}, {{50, 50, 8, 8}, gt}, {0.9, 0.5})};
    EXPECT_NEAR(average_precision(qs, 0.5), 0.5, 1e-12);
}

TEST(Metrics, AgreeWithBruteForceOnRandomSmallCases) {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<int> count(0, 5);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> nudge(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalQuery> qs(1 + trial % 3);
        for (auto& q : qs) {
            const int ng = count(rng);
            for (int g = 0; g < ng; ++g) q.gt.push_back(oracle::random_box(rng, 60.0, 20.0));
            for (const auto& g : q.gt) {
                if (u(rng) < 0.7) q.boxes.push_back({g.cx + nudge(rng), g.cy + nudge(rng), g.w, g.h});
            }
            const int extra = count(rng) / 2;
            for (int e = 0; e < extra; ++e) q.boxes.push_back(oracle::random_box(rng, 60.0, 20.0));
            for (std::size_t i = 0; i < q.boxes.size(); ++i) q.scores.push_back(u(rng));
        }
        const MetricSet m = compute_metrics(qs);
        double mean = 0.0;
        for (double t : iou_thresholds()) mean += oracle::average_precision(qs, t);
        mean /= 10.0;
        EXPECT_NEAR(m.ap, mean, 1e-6) << "trial " << trial;
        EXPECT_NEAR(m.ap50, oracle::average_precision(qs, 0.5), 1e-6);
        EXPECT_NEAR(m.ap75, oracle::average_precision(qs, 0.75), 1e-6);
        EXPECT_LE(m.mae, m.rmse + 1e-12);
        EXPECT_GE(m.ap50, m.ap75);
    }
}

TEST(Metrics, ApDecreasesWithTheIouThreshold) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nudge(0.0, 2.5);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<EvalQuery> qs(4);
    for (auto& q : qs) {
        for (int g = 0; g < 6; ++g) {
            q.gt.push_back(oracle::random_box(rng, 100.0, 25.0));
            const auto& b = q.gt.back();
            q.boxes.push_back({b.cx + nudge(rng), b.cy + nudge(rng), b.w, b.h});
            q.scores.push_back(u(rng));
        }
    }
    double previous = 1.0;
    for (double t : iou_thresholds()) {
        const double ap = average_precision(qs, t);
        EXPECT_LE(ap, previous + 1e-12);
        previous = ap;
    }
}

SampleAnnotation sample(const std::string& image, std::vector<BoxXYWH> boxes) {
    SampleAnnotation s;
    s.image = image;
    s.width = s.height = 64;
    s.patterns.push_back({0, {boxes.front()}, boxes});
    return s;
}

TEST(Evaluate, AlignsPredictionsByImageAndPattern) {
    const std::vector<SampleAnnotation> gts{sample("a", {{10, 10, 8, 8}}), sample("b", {{20, 20, 8, 8}})};
    const std::vector<PredictionSet> preds{{"b", 0, {{20, 20, 8, 8}}, {0.9}}};
    const EvalReport r = evaluate(preds, gts);
    EXPECT_EQ(r.overall.queries, 2);
    EXPECT_NEAR(r.overall.ap50, 0.5, 0.01);
    EXPECT_DOUBLE_EQ(r.overall.mae, 0.5);
    ASSERT_EQ(r.per_pattern.count(0), 1U);
    const auto j = to_json(r);
    EXPECT_TRUE(j.contains("AP50"));
    EXPECT_TRUE(j.contains("per_pattern"));
}

TEST(Evaluate, RejectsDuplicatesAndUnknownQueries) {
    const std::vector<SampleAnnotation> gts{sample("a", {{10, 10, 8, 8}})};
    const std::vector<SampleAnnotation> dup{gts[0], gts[0]};
    EXPECT_THROW(evaluate({}, dup), ArgumentError);
    const std::vector<PredictionSet> unknown{{"zzz", 0, {}, {}}};
    EXPECT_THROW(evaluate(unknown, gts), ArgumentError);
    const std::vector<PredictionSet> twice{{"a", 0, {}, {}}, {"a", 0, {}, {}}};
    EXPECT_THROW(evaluate(twice, gts), ArgumentError);
}

}  // namespace
}  // namespace tmr
