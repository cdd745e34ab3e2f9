#include "tmr/infer.hpp"

#include <algorithm>
#include <cmath>

#include "tmr/errors.hpp"
#include "tmr/layers.hpp"

namespace tmr {

void InferConfig::validate() const {
    if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0, 1), got " + std::to_string(tau));
    if (!(nms_iou > 0.0 && nms_iou < 1.0)) {
        throw ConfigError("nms_iou must lie in (0, 1), got " + std::to_string(nms_iou));
    }
    for (int s : scales) {
        if (s < 1) throw ConfigError("scales must be positive, got " + std::to_string(s));
    }
}

template <typename T>
std::vector<Detection> threshold_filter(const Grid3<T>& presence, const Grid3<T>& boxes, double tau, int exemplar_id,
                                        int scale_id) {
    if (presence.height != boxes.height || presence.width != boxes.width || presence.depth != 1 || boxes.depth != 4) {
        throw ArgumentError("threshold_filter: presence " + shape_string(presence) + " and boxes " +
                            shape_string(boxes) + " are not aligned");
    }
    std::vector<Detection> out;
    for (int y = 0; y < presence.height; ++y) {
        for (int x = 0; x < presence.width; ++x) {
            const double score = presence.at(y, x, 0);
            if (score < tau) continue;
            Detection d;
            d.box = box_at(boxes, y, x);
            d.score = score;
            d.exemplar_id = exemplar_id;
            d.scale_id = scale_id;
            d.cell_index = y * presence.width + x;
            out.push_back(d);
        }
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.cell_index != b.cell_index) return a.cell_index < b.cell_index;
        if (a.exemplar_id != b.exemplar_id) return a.exemplar_id < b.exemplar_id;
        return a.scale_id < b.scale_id;
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        const bool suppressed =
            std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) >= iou_thresh; });
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace {

std::vector<Detection> candidates_at_scale(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                           const Model<float>& model, const InferConfig& cfg, int scale_id) {
    std::vector<Detection> all;
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
        std::vector<Detection> dets = detect_one_exemplar(fm, exemplars[i], model, cfg, static_cast<int>(i));
        for (auto& d : dets) d.scale_id = scale_id;
        if (cfg.refine_hook) dets = cfg.refine_hook(std::move(dets));
        all.insert(all.end(), dets.begin(), dets.end());
    }
    return all;
}

FeatureMap resize_features(const FeatureMap& fm, int longer_side) {
    const int longer = std::max(fm.height(), fm.width());
    const double ratio = static_cast<double>(longer_side) / longer;
    const int h = std::max(1, static_cast<int>(std::lround(fm.height() * ratio)));
    const int w = std::max(1, static_cast<int>(std::lround(fm.width() * ratio)));
    FeatureMap out;
    out.grid = bilinear_resize(fm.grid, h, w);
    out.stride = fm.stride * static_cast<double>(fm.width()) / w;
    out.source = fm.source;
    out.scale_id = fm.scale_id;
    return out;
}

}  // namespace

std::vector<Detection> detect_one_exemplar(const FeatureMap& fm, const BoxXYWH& exemplar, const Model<float>& model,
                                           const InferConfig& cfg, int exemplar_id) {
    cfg.validate();
    const HeadOutput<float> out = model.predict(fm, exemplar);
    return threshold_filter(out.presence, out.boxes, cfg.tau, exemplar_id, fm.scale_id);
}

std::vector<Detection> few_shot_candidates(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                           const Model<float>& model, const InferConfig& cfg) {
    if (exemplars.empty()) throw ArgumentError("detection needs at least one exemplar");
    return candidates_at_scale(fm, exemplars, model, cfg, fm.scale_id);
}

std::vector<Detection> detect_few_shot(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                       const Model<float>& model, const InferConfig& cfg) {
    return nms(few_shot_candidates(fm, exemplars, model, cfg), cfg.nms_iou);
}

std::vector<Detection> multi_scale_candidates(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                              const Model<float>& model, const InferConfig& cfg) {
    if (exemplars.empty()) throw ArgumentError("detection needs at least one exemplar");
    if (cfg.scales.empty()) return few_shot_candidates(fm, exemplars, model, cfg);
    std::vector<Detection> all;
    for (std::size_t s = 0; s < cfg.scales.size(); ++s) {
        const FeatureMap scaled = resize_features(fm, cfg.scales[s]);
        std::vector<Detection> dets = candidates_at_scale(scaled, exemplars, model, cfg, static_cast<int>(s));
        all.insert(all.end(), dets.begin(), dets.end());
    }
    return all;
}

std::vector<Detection> detect_multi_scale(const FeatureMap& fm, std::span<const BoxXYWH> exemplars,
                                          const Model<float>& model, const InferConfig& cfg) {
    return nms(multi_scale_candidates(fm, exemplars, model, cfg), cfg.nms_iou);
}

std::vector<Detection> detect(const FeatureMap& input, std::span<const BoxXYWH> exemplars, const Model<float>& model,
                              const InferConfig& cfg) {
    return detect_multi_scale(model.features(input), exemplars, model, cfg);
}

template std::vector<Detection> threshold_filter(const Grid3<float>&, const Grid3<float>&, double, int, int);
template std::vector<Detection> threshold_filter(const Grid3<double>&, const Grid3<double>&, double, int, int);

}  // namespace tmr
