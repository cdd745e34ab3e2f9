#pragma once

#include "tmr/backbone.hpp"
#include "tmr/box.hpp"
#include "tmr/grid.hpp"

namespace tmr {

struct TemplateSize {
    int height = 1;
    int width = 1;
    bool operator==(const TemplateSize&) const = default;
};

/// Smallest grid-aligned cell span covering the exemplar on a map of the given stride:
/// t_w = ceil(right/stride) - floor(left/stride), likewise for height, never below 1.
TemplateSize template_size(const BoxXYWH& exemplar, double stride);

/// Feature-space crop of an exemplar.
template <typename T>
struct Template {
    Grid3<T> grid;
    BoxXYWH exemplar;
    double feature_stride = 1.0;

    [[nodiscard]] int height() const { return grid.height; }
    [[nodiscard]] int width() const { return grid.width; }
};

/// RoIAlign with an adaptive output size (template_size). The exemplar box is split into
/// t_h x t_w bins and each bin is sampled once, bilinearly, at its center. Sample positions
/// outside the map are clamped to the border cells.
template <typename T>
Template<T> roi_align_extract(const FeatureMapT<T>& fm, const BoxXYWH& exemplar);

/// Scatters a template gradient back onto a map of the given shape.
template <typename T>
Grid3<T> roi_align_backward(int map_height, int map_width, double stride, const BoxXYWH& exemplar,
                            const Grid3<T>& grad_template);

}  // namespace tmr
