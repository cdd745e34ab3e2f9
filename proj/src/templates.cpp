#include "tmr/templates.hpp"

#include <cmath>
#include <vector>

namespace tmr {
namespace {

// Slack against round-off when an exemplar edge sits exactly on a cell boundary.
constexpr double kEdgeSlack = 1e-9;

struct Sample {
    int i0, i1;
    double frac;
};

// Bin-center samples along one axis in cell-index space (cell k is centered at k).
std::vector<Sample> axis_samples(double lo_px, double extent_px, double stride, int bins, int cells) {
    std::vector<Sample> out(bins);
    const double lo = lo_px / stride;
    const double bin = extent_px / stride / bins;
    for (int i = 0; i < bins; ++i) {
        double u = lo + (i + 0.5) * bin - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(cells - 1));
        const int i0 = std::min(static_cast<int>(std::floor(u)), cells - 1);
        const int i1 = std::min(i0 + 1, cells - 1);
        out[i] = {i0, i1, u - i0};
    }
    return out;
}

void check_exemplar(const BoxXYWH& e, int map_height, int map_width, double stride) {
    if (!e.valid()) throw ArgumentError("exemplar " + to_string(e) + " must have positive finite size");
    if (!(stride > 0)) throw ArgumentError("feature stride must be positive");
    const double img_w = map_width * stride;
    const double img_h = map_height * stride;
    if (e.right() <= 0 || e.left() >= img_w || e.bottom() <= 0 || e.top() >= img_h) {
        throw ArgumentError("exemplar " + to_string(e) + " lies entirely outside the image");
    }
}

}  // namespace

TemplateSize template_size(const BoxXYWH& exemplar, double stride) {
    if (!(stride > 0)) throw ArgumentError("template_size: stride must be positive");
    const auto span = [&](double lo, double hi) {
        const int cells = static_cast<int>(std::ceil(hi / stride - kEdgeSlack)) -
                          static_cast<int>(std::floor(lo / stride + kEdgeSlack));
        return std::max(1, cells);
    };
    return {span(exemplar.top(), exemplar.bottom()), span(exemplar.left(), exemplar.right())};
}

template <typename T>
Template<T> roi_align_extract(const FeatureMapT<T>& fm, const BoxXYWH& exemplar) {
    check_exemplar(exemplar, fm.grid.height, fm.grid.width, fm.stride);
    const TemplateSize ts = template_size(exemplar, fm.stride);
    const auto ys = axis_samples(exemplar.top(), exemplar.h, fm.stride, ts.height, fm.grid.height);
    const auto xs = axis_samples(exemplar.left(), exemplar.w, fm.stride, ts.width, fm.grid.width);

    Template<T> t;
    t.exemplar = exemplar;
    t.feature_stride = fm.stride;
    t.grid = Grid3<T>(ts.height, ts.width, fm.grid.depth);
    const int d = fm.grid.depth;
    for (int j = 0; j < ts.height; ++j) {
        const T fy = static_cast<T>(ys[j].frac);
        for (int i = 0; i < ts.width; ++i) {
            const T fx = static_cast<T>(xs[i].frac);
            const T* a = fm.grid.values.data() + fm.grid.index(ys[j].i0, xs[i].i0, 0);
            const T* b = fm.grid.values.data() + fm.grid.index(ys[j].i0, xs[i].i1, 0);
            const T* c = fm.grid.values.data() + fm.grid.index(ys[j].i1, xs[i].i0, 0);
            const T* e = fm.grid.values.data() + fm.grid.index(ys[j].i1, xs[i].i1, 0);
            T* o = t.grid.values.data() + t.grid.index(j, i, 0);
            const T w00 = (T(1) - fx) * (T(1) - fy), w01 = fx * (T(1) - fy), w10 = (T(1) - fx) * fy, w11 = fx * fy;
            for (int k = 0; k < d; ++k) o[k] = w00 * a[k] + w01 * b[k] + w10 * c[k] + w11 * e[k];
        }
    }
    return t;
}

template <typename T>
Grid3<T> roi_align_backward(int map_height, int map_width, double stride, const BoxXYWH& exemplar,
                            const Grid3<T>& grad_template) {
    check_exemplar(exemplar, map_height, map_width, stride);
    const TemplateSize ts = template_size(exemplar, stride);
    if (grad_template.height != ts.height || grad_template.width != ts.width) {
        throw ConfigError("roi_align_backward: gradient shape " + shape_string(grad_template) +
                          " does not match template size");
    }
    const auto ys = axis_samples(exemplar.top(), exemplar.h, stride, ts.height, map_height);
    const auto xs = axis_samples(exemplar.left(), exemplar.w, stride, ts.width, map_width);
    Grid3<T> g(map_height, map_width, grad_template.depth);
    const int d = grad_template.depth;
    for (int j = 0; j < ts.height; ++j) {
        const T fy = static_cast<T>(ys[j].frac);
        for (int i = 0; i < ts.width; ++i) {
            const T fx = static_cast<T>(xs[i].frac);
            const T* go = grad_template.values.data() + grad_template.index(j, i, 0);
            T* a = g.values.data() + g.index(ys[j].i0, xs[i].i0, 0);
            T* b = g.values.data() + g.index(ys[j].i0, xs[i].i1, 0);
            T* c = g.values.data() + g.index(ys[j].i1, xs[i].i0, 0);
            T* e = g.values.data() + g.index(ys[j].i1, xs[i].i1, 0);
            const T w00 = (T(1) - fx) * (T(1) - fy), w01 = fx * (T(1) - fy), w10 = (T(1) - fx) * fy, w11 = fx * fy;
            for (int k = 0; k < d; ++k) {
                a[k] += w00 * go[k];
                b[k] += w01 * go[k];
                c[k] += w10 * go[k];
                e[k] += w11 * go[k];
            }
        }
    }
    return g;
}

template Template<float> roi_align_extract(const FeatureMapT<float>&, const BoxXYWH&);
template Template<double> roi_align_extract(const FeatureMapT<double>&, const BoxXYWH&);
template Grid3<float> roi_align_backward(int, int, double, const BoxXYWH&, const Grid3<float>&);
template Grid3<double> roi_align_backward(int, int, double, const BoxXYWH&, const Grid3<double>&);

}  // namespace tmr
