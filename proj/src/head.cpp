#include "tmr/head.hpp"

#include <cmath>

namespace tmr {

std::string to_string(DecodeVariant v) {
    switch (v) {
        case DecodeVariant::none: return "none";
        case DecodeVariant::unconditioned: return "unconditioned";
        case DecodeVariant::scale_only: return "scale_only";
        case DecodeVariant::full: return "full";
    }
    return "full";
}

DecodeVariant parse_decode_variant(const std::string& s) {
    if (s == "none" || s == "a") return DecodeVariant::none;
    if (s == "unconditioned" || s == "b") return DecodeVariant::unconditioned;
    if (s == "scale_only" || s == "c") return DecodeVariant::scale_only;
    if (s == "full" || s == "d") return DecodeVariant::full;
    throw ArgumentError("unknown decode variant '" + s + "'");
}

template <typename T>
Grid3<T> branch_forward(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope, BranchCache<T>* cache) {
    Grid3<T> pre = conv3x3_forward(head_input, branch.conv);
    Grid3<T> hidden = leaky_relu(pre, slope);
    Grid3<T> out = linear_forward(hidden, branch.linear);
    if (cache) {
        cache->pre_activation = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return out;
}

template <typename T>
Grid3<T> branch_backward(const Grid3<T>& head_input, HeadBranch<T>& branch, const BranchCache<T>& cache,
                         const Grid3<T>& grad_out, T slope) {
    Grid3<T> g = linear_backward(cache.hidden, branch.linear, grad_out);
    g = leaky_relu_backward(cache.pre_activation, g, slope);
    return conv3x3_backward(head_input, branch.conv, g);
}

template <typename T>
Grid3<T> regress(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope, BranchCache<T>* cache) {
    if (branch.linear.out != 4) throw ConfigError("regress: box branch must output 4 channels");
    return branch_forward(head_input, branch, slope, cache);
}

template <typename T>
Grid3<T> presence(const Grid3<T>& head_input, const HeadBranch<T>& branch, T slope, BranchCache<T>* cache) {
    if (branch.linear.out != 1) throw ConfigError("presence: presence branch must output 1 channel");
    return sigmoid(branch_forward(head_input, branch, slope, cache));
}

namespace {

struct ExemplarUnits {
    double sw, sh;
};

ExemplarUnits exemplar_units(const BoxXYWH& exemplar, double stride) {
    if (!exemplar.valid()) throw ArgumentError("decode_boxes: invalid exemplar " + to_string(exemplar));
    if (!(stride > 0)) throw ArgumentError("decode_boxes: stride must be positive");
    return {exemplar.w / stride, exemplar.h / stride};
}

}  // namespace

template <typename T>
Grid3<T> decode_boxes(const Grid3<T>& reg, const BoxXYWH& exemplar, double stride, DecodeVariant variant) {
    if (reg.depth != 4) throw ConfigError("decode_boxes: regression map must have 4 channels");
    const auto [sw, sh] = exemplar_units(exemplar, stride);
    Grid3<T> out(reg.height, reg.width, 4);
    for (int y = 0; y < reg.height; ++y) {
        for (int x = 0; x < reg.width; ++x) {
            const T* r = reg.values.data() + reg.index(y, x, 0);
            const double dx = r[0], dy = r[1], aw = r[2], ah = r[3];
            const double px = x + 0.5, py = y + 0.5;
            double cx = px, cy = py, w = sw, h = sh;
            switch (variant) {
                case DecodeVariant::none: break;
                case DecodeVariant::unconditioned:
                    cx = px + dx, cy = py + dy, w = std::exp(aw), h = std::exp(ah);
                    break;
                case DecodeVariant::scale_only:
                    cx = px + dx, cy = py + dy, w = std::exp(aw) * sw, h = std::exp(ah) * sh;
                    break;
                case DecodeVariant::full:
                    cx = px + sw * dx, cy = py + sh * dy, w = std::exp(aw) * sw, h = std::exp(ah) * sh;
                    break;
            }
            if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h) || !(w > 0) ||
                !(h > 0)) {
                throw NumericError("decode_boxes: non-finite box at cell (x=" + std::to_string(x) +
                                   ", y=" + std::to_string(y) + ")");
            }
            T* o = out.values.data() + out.index(y, x, 0);
            o[0] = static_cast<T>(cx * stride);
            o[1] = static_cast<T>(cy * stride);
            o[2] = static_cast<T>(w * stride);
            o[3] = static_cast<T>(h * stride);
        }
    }
    return out;
}

template <typename T>
Grid3<T> decode_boxes_backward(const Grid3<T>& reg, const BoxXYWH& exemplar, double stride, DecodeVariant variant,
                               const Grid3<T>& grad_boxes) {
    if (!reg.same_shape(grad_boxes) || reg.depth != 4) {
        throw ConfigError("decode_boxes_backward: shape mismatch");
    }
    const auto [sw, sh] = exemplar_units(exemplar, stride);
    Grid3<T> g(reg.height, reg.width, 4);
    for (std::size_t c = 0; c < reg.cells(); ++c) {
        const T* r = reg.values.data() + 4 * c;
        const T* gb = grad_boxes.values.data() + 4 * c;
        T* o = g.values.data() + 4 * c;
        double jx = 0, jy = 0, jw = 0, jh = 0;  // d(pixel box)/d(reg), diagonal
        switch (variant) {
            case DecodeVariant::none: break;
            case DecodeVariant::unconditioned:
                jx = stride, jy = stride, jw = std::exp(double(r[2])) * stride, jh = std::exp(double(r[3])) * stride;
                break;
            case DecodeVariant::scale_only:
                jx = stride, jy = stride;
                jw = std::exp(double(r[2])) * sw * stride, jh = std::exp(double(r[3])) * sh * stride;
                break;
            case DecodeVariant::full:
                jx = sw * stride, jy = sh * stride;
                jw = std::exp(double(r[2])) * sw * stride, jh = std::exp(double(r[3])) * sh * stride;
                break;
        }
        o[0] = static_cast<T>(gb[0] * jx);
        o[1] = static_cast<T>(gb[1] * jy);
        o[2] = static_cast<T>(gb[2] * jw);
        o[3] = static_cast<T>(gb[3] * jh);
    }
    return g;
}

#define TMR_INSTANTIATE_HEAD(T)                                                                                  \
    template Grid3<T> branch_forward(const Grid3<T>&, const HeadBranch<T>&, T, BranchCache<T>*);                 \
    template Grid3<T> branch_backward(const Grid3<T>&, HeadBranch<T>&, const BranchCache<T>&, const Grid3<T>&, T); \
    template Grid3<T> regress(const Grid3<T>&, const HeadBranch<T>&, T, BranchCache<T>*);                        \
    template Grid3<T> presence(const Grid3<T>&, const HeadBranch<T>&, T, BranchCache<T>*);                       \
    template Grid3<T> decode_boxes(const Grid3<T>&, const BoxXYWH&, double, DecodeVariant);                      \
    template Grid3<T> decode_boxes_backward(const Grid3<T>&, const BoxXYWH&, double, DecodeVariant, const Grid3<T>&);

TMR_INSTANTIATE_HEAD(float)
TMR_INSTANTIATE_HEAD(double)

}  // namespace tmr
