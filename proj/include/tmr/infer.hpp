#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tmr/backbone.hpp"
#include "tmr/box.hpp"
#include "tmr/model.hpp"

namespace tmr {

struct Detection {
    BoxXYWH box;
    double score = 0.0;
    int exemplar_id = 0;
    int scale_id = 0;
    /// Row-major cell the detection came from; breaks score ties in NMS.
    int cell_index = 0;

    bool operator==(const Detection&) const = default;
};

/// Optional external refiner applied to thresholded candidates before NMS.
using RefineHook = std::function<std::vector<Detection>(std::vector<Detection>)>;

struct InferConfig {
    double tau = 0.4;
    double nms_iou = 0.5;
    /// Square resolutions (longer side, in cells) to resize F to. Empty = native only.
    std::vector<int> scales;
    RefineHook refine_hook;

    void validate() const;
};

/// One detection per cell with score >= tau, row-major.
template <typename T>
std::vector<Detection> threshold_filter(const Grid3<T>& presence, const Grid3<T>& boxes, double tau,
                                        int exemplar_id = 0, int scale_id = 0);

/// Greedy NMS: order by descending score (then lower cell index, exemplar, scale), keep a box
/// unless its IoU with an already kept box is >= iou_thresh.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

/// Template -> match -> head -> decode -> threshold for one exemplar; no NMS.
std::vector<Detection> detect_one_exemplar(const FeatureMap& fm, const BoxXYWH& exemplar, const Model<float>& model,
                                           const InferConfig& cfg, int exemplar_id = 0);

/// Union of per-exemplar candidates (after the refine hook), before NMS.
std::vector<Detection> few_shot_candidates(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                           const Model<float>& model, const InferConfig& cfg);

std::vector<Detection> detect_few_shot(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                       const Model<float>& model, const InferConfig& cfg);

/// Candidates from every configured scale (F resized so its longer side equals the scale,
/// stride rescaled accordingly), before NMS.
std::vector<Detection> multi_scale_candidates(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                              const Model<float>& model, const InferConfig& cfg);

/// `fm` is the model's projected feature map F. With no scales configured this is detect_few_shot.
std::vector<Detection> detect_multi_scale(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                          const Model<float>& model, const InferConfig& cfg);

/// Full path from raw model input (image at stride 1 or precomputed map) to final detections.
std::vector<Detection> detect(const FeatureMap& input, std::span<const BoxXYWH> exemplars, const Model<float>& model,
                              const InferConfig& cfg);

}  // namespace tmr
