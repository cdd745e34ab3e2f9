#pragma once

#include <string>

#include "tmr/backbone.hpp"
#include "tmr/grid.hpp"
#include "tmr/templates.hpp"

namespace tmr {

/// Head-input variants, one per row of the matching-feature ablation:
/// none = F, tm_only = F_TM, tm_cos = [F_TM-cos; F], pm = [F_PM; F], tm = [F_TM; F].
enum class MatchVariant { none, tm_only, tm_cos, pm, tm };

std::string to_string(MatchVariant v);
MatchVariant parse_match_variant(const std::string& s);

/// Depth of F_P for a D-channel feature map.
int head_input_depth(MatchVariant v, int feature_depth);

/// Depth of the matching feature alone (0 for `none`).
int match_depth(MatchVariant v, int feature_depth);

/// Channel-wise template matching:
///   out(x,y,d) = scale / (t_w t_h) * sum_{x',y'} F(x + x' - floor(t_w/2), y + y' - floor(t_h/2), d) T(x',y',d)
/// Reads outside F are zero.
template <typename T>
Grid3<T> template_match(const Grid3<T>& features, const Grid3<T>& templ, T scale = T(1));

/// Average-pools the template to one D-vector, then out = scale * F * proto per channel.
template <typename T>
Grid3<T> prototype_match(const Grid3<T>& features, const Grid3<T>& templ, T scale = T(1));

/// Depth-1 map of scale * cos(flattened template, same-footprint window of F); zero vectors give 0.
template <typename T>
Grid3<T> cosine_match(const Grid3<T>& features, const Grid3<T>& templ, T scale = T(1));

template <typename T>
Grid3<T> template_match(const FeatureMapT<T>& fm, const Template<T>& t, T scale = T(1)) {
    return template_match(fm.grid, t.grid, scale);
}
template <typename T>
Grid3<T> prototype_match(const FeatureMapT<T>& fm, const Template<T>& t, T scale = T(1)) {
    return prototype_match(fm.grid, t.grid, scale);
}
template <typename T>
Grid3<T> cosine_match(const FeatureMapT<T>& fm, const Template<T>& t, T scale = T(1)) {
    return cosine_match(fm.grid, t.grid, scale);
}

template <typename T>
struct MatchGrads {
    Grid3<T> features;
    Grid3<T> templ;
    T scale = T(0);
};

template <typename T>
MatchGrads<T> template_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                      const Grid3<T>& grad_out);
template <typename T>
MatchGrads<T> prototype_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                       const Grid3<T>& grad_out);
template <typename T>
MatchGrads<T> cosine_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                    const Grid3<T>& grad_out);

/// Dispatch on variant; `none` yields an empty grid.
template <typename T>
Grid3<T> compute_match(MatchVariant v, const Grid3<T>& features, const Grid3<T>& templ, T scale);
template <typename T>
MatchGrads<T> compute_match_backward(MatchVariant v, const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                     const Grid3<T>& grad_out);

/// F_P for the variant: [match; F], match alone, or F alone.
template <typename T>
Grid3<T> build_head_input(const Grid3<T>& features, const Grid3<T>& match, MatchVariant v);

/// Splits dL/dF_P into (dL/dmatch, dL/dF) following build_head_input's layout.
template <typename T>
void split_head_input_grad(const Grid3<T>& grad, MatchVariant v, int feature_depth, Grid3<T>& grad_match,
                           Grid3<T>& grad_features);

}  // namespace tmr
