#pragma once

#include <string>

#include "tmr/box.hpp"
#include "tmr/grid.hpp"
#include "tmr/layers.hpp"

namespace tmr {

/// Box decodings of the regression ablation, rows (a)..(d):
///   none          (x, y, s_w, s_h)
///   unconditioned (x + dx, y + dy, e^aw, e^ah)
///   scale_only    (x + dx, y + dy, e^aw s_w, e^ah s_h)
///   full          (x + s_w dx, y + s_h dy, e^aw s_w, e^ah s_h)
/// computed in feature units (cell (x, y) centered at x + 0.5, y + 0.5) and scaled to pixels by the stride.
enum class DecodeVariant { none, unconditioned, scale_only, full };

std::string to_string(DecodeVariant v);
DecodeVariant parse_decode_variant(const std::string& s);

/// conv3x3(in -> in) -> LeakyReLU -> linear(in -> out).
template <typename T>
struct HeadBranch {
    LayerParams<T> conv;
    LayerParams<T> linear;

    static HeadBranch make(const std::string& name, int in, int out) {
        return {LayerParams<T>::conv3x3(name + ".conv", in, in), LayerParams<T>::linear(name + ".linear", in, out)};
    }
};

template <typename T>
struct BranchCache {
    Grid3<T> pre_activation;
    Grid3<T> hidden;
};

template <typename T>
Grid3<T> branch_forward(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope = T(0.01),
                        BranchCache<T>* cache = nullptr);

/// Accumulates branch gradients; returns dL/dhead_input.
template <typename T>
Grid3<T> branch_backward(const Grid3<T>& head_input, HeadBranch<T>& branch, const BranchCache<T>& cache,
                         const Grid3<T>& grad_out, T slope = T(0.01));

/// Raw (dx, dy, aw, ah) per cell, H x W x 4.
template <typename T>
Grid3<T> regress(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope = T(0.01),
                 BranchCache<T>* cache = nullptr);

/// Sigmoid presence scores, H x W x 1.
template <typename T>
Grid3<T> presence(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope = T(0.01),
                  BranchCache<T>* cache = nullptr);

/// H x W x 4 map of (cx, cy, w, h) in image pixels. Throws NumericError naming the cell on
/// non-finite regression values or decoded sizes.
template <typename T>
Grid3<T> decode_boxes(const Grid3<T>& reg, const BoxXYWH& exemplar, double stride, DecodeVariant variant);

/// dL/dreg given dL/dboxes.
template <typename T>
Grid3<T> decode_boxes_backward(const Grid3<T>& reg, const BoxXYWH& exemplar, double stride, DecodeVariant variant,
                               const Grid3<T>& grad_boxes);

template <typename T>
BoxXYWH box_at(const Grid3<T>& boxes, int y, int x) {
    const T* b = boxes.values.data() + boxes.index(y, x, 0);
    return {static_cast<double>(b[0]), static_cast<double>(b[1]), static_cast<double>(b[2]),
            static_cast<double>(b[3])};
}

}  // namespace tmr
