#include "tmr/matching.hpp"

#include <cmath>

namespace tmr {
namespace {

template <typename T>
void check_depths(const Grid3<T>& features, const Grid3<T>& templ) {
    if (features.depth != templ.depth) {
        throw ConfigError("matching: feature depth " + std::to_string(features.depth) + " != template depth " +
                          std::to_string(templ.depth));
    }
    if (templ.height < 1 || templ.width < 1) throw ConfigError("matching: empty template");
}

template <typename T>
std::vector<T> pooled_prototype(const Grid3<T>& templ) {
    std::vector<T> proto(templ.depth, T(0));
    for (int j = 0; j < templ.height; ++j)
        for (int i = 0; i < templ.width; ++i) {
            auto px = templ.pixel(j, i);
            for (int d = 0; d < templ.depth; ++d) proto[d] += px[d];
        }
    const T n = static_cast<T>(templ.height * templ.width);
    for (auto& p : proto) p /= n;
    return proto;
}

}  // namespace

std::string to_string(MatchVariant v) {
    switch (v) {
        case MatchVariant::none: return "none";
        case MatchVariant::tm_only: return "tm_only";
        case MatchVariant::tm_cos: return "tm_cos";
        case MatchVariant::pm: return "pm";
        case MatchVariant::tm: return "tm";
    }
    return "tm";
}

MatchVariant parse_match_variant(const std::string& s) {
    if (s == "none" || s == "a") return MatchVariant::none;
    if (s == "tm_only" || s == "b") return MatchVariant::tm_only;
    if (s == "tm_cos" || s == "c") return MatchVariant::tm_cos;
    if (s == "pm" || s == "d") return MatchVariant::pm;
    if (s == "tm" || s == "e") return MatchVariant::tm;
    throw ArgumentError("unknown matching variant '" + s + "'");
}

int match_depth(MatchVariant v, int feature_depth) {
    switch (v) {
        case MatchVariant::none: return 0;
        case MatchVariant::tm_cos: return 1;
        default: return feature_depth;
    }
}

int head_input_depth(MatchVariant v, int feature_depth) {
    switch (v) {
        case MatchVariant::none:
        case MatchVariant::tm_only: return feature_depth;
        case MatchVariant::tm_cos: return feature_depth + 1;
        case MatchVariant::pm:
        case MatchVariant::tm: return 2 * feature_depth;
    }
    return 2 * feature_depth;
}

template <typename T>
Grid3<T> template_match(const Grid3<T>& features, const Grid3<T>& templ, T scale) {
    check_depths(features, templ);
    const int H = features.height, W = features.width, D = features.depth;
    const int th = templ.height, tw = templ.width;
    const int oy = th / 2, ox = tw / 2;
    const T norm = scale / static_cast<T>(th * tw);
    Grid3<T> out(H, W, D);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            T* o = out.values.data() + out.index(y, x, 0);
            for (int j = 0; j < th; ++j) {
                const int yy = y + j - oy;
                if (yy < 0 || yy >= H) continue;
                for (int i = 0; i < tw; ++i) {
                    const int xx = x + i - ox;
                    if (xx < 0 || xx >= W) continue;
                    const T* f = features.values.data() + features.index(yy, xx, 0);
                    const T* t = templ.values.data() + templ.index(j, i, 0);
                    for (int d = 0; d < D; ++d) o[d] += f[d] * t[d];
                }
            }
            for (int d = 0; d < D; ++d) o[d] *= norm;
        }
    }
    return out;
}

template <typename T>
MatchGrads<T> template_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                      const Grid3<T>& grad_out) {
    check_depths(features, templ);
    if (!grad_out.same_shape(features)) throw ConfigError("template_match_backward: gradient shape mismatch");
    const int H = features.height, W = features.width, D = features.depth;
    const int th = templ.height, tw = templ.width;
    const int oy = th / 2, ox = tw / 2;
    const T inv_n = T(1) / static_cast<T>(th * tw);
    const T norm = scale * inv_n;
    MatchGrads<T> g{Grid3<T>(H, W, D), Grid3<T>(th, tw, D), T(0)};
    std::vector<T> raw(D);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const T* go = grad_out.values.data() + grad_out.index(y, x, 0);
            std::fill(raw.begin(), raw.end(), T(0));
            for (int j = 0; j < th; ++j) {
                const int yy = y + j - oy;
                if (yy < 0 || yy >= H) continue;
                for (int i = 0; i < tw; ++i) {
                    const int xx = x + i - ox;
                    if (xx < 0 || xx >= W) continue;
                    const T* f = features.values.data() + features.index(yy, xx, 0);
                    const T* t = templ.values.data() + templ.index(j, i, 0);
                    T* gf = g.features.values.data() + g.features.index(yy, xx, 0);
                    T* gt = g.templ.values.data() + g.templ.index(j, i, 0);
                    for (int d = 0; d < D; ++d) {
                        gf[d] += go[d] * norm * t[d];
                        gt[d] += go[d] * norm * f[d];
                        raw[d] += f[d] * t[d];
                    }
                }
            }
            for (int d = 0; d < D; ++d) g.scale += go[d] * raw[d] * inv_n;
        }
    }
    return g;
}

template <typename T>
Grid3<T> prototype_match(const Grid3<T>& features, const Grid3<T>& templ, T scale) {
    check_depths(features, templ);
    const auto proto = pooled_prototype(templ);
    Grid3<T> out = features;
    const int D = features.depth;
    for (std::size_t c = 0; c < out.cells(); ++c) {
        T* o = out.values.data() + c * D;
        for (int d = 0; d < D; ++d) o[d] *= proto[d] * scale;
    }
    return out;
}

template <typename T>
MatchGrads<T> prototype_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                       const Grid3<T>& grad_out) {
    check_depths(features, templ);
    if (!grad_out.same_shape(features)) throw ConfigError("prototype_match_backward: gradient shape mismatch");
    const auto proto = pooled_prototype(templ);
    const int D = features.depth;
    MatchGrads<T> g{Grid3<T>(features.height, features.width, D), Grid3<T>(templ.height, templ.width, D), T(0)};
    std::vector<T> gproto(D, T(0));
    for (std::size_t c = 0; c < features.cells(); ++c) {
        const T* f = features.values.data() + c * D;
        const T* go = grad_out.values.data() + c * D;
        T* gf = g.features.values.data() + c * D;
        for (int d = 0; d < D; ++d) {
            gf[d] = go[d] * proto[d] * scale;
            gproto[d] += go[d] * f[d];
            g.scale += go[d] * f[d] * proto[d];
        }
    }
    const T n = static_cast<T>(templ.height * templ.width);
    for (std::size_t c = 0; c < g.templ.cells(); ++c) {
        T* gt = g.templ.values.data() + c * D;
        for (int d = 0; d < D; ++d) gt[d] = gproto[d] * scale / n;
    }
    return g;
}

template <typename T>
Grid3<T> cosine_match(const Grid3<T>& features, const Grid3<T>& templ, T scale) {
    check_depths(features, templ);
    const int H = features.height, W = features.width, D = features.depth;
    const int th = templ.height, tw = templ.width;
    const int oy = th / 2, ox = tw / 2;
    T tnorm2 = T(0);
    for (T v : templ.values) tnorm2 += v * v;
    Grid3<T> out(H, W, 1);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            T dot = T(0), wnorm2 = T(0);
            for (int j = 0; j < th; ++j) {
                const int yy = y + j - oy;
                if (yy < 0 || yy >= H) continue;
                for (int i = 0; i < tw; ++i) {
                    const int xx = x + i - ox;
                    if (xx < 0 || xx >= W) continue;
                    const T* f = features.values.data() + features.index(yy, xx, 0);
                    const T* t = templ.values.data() + templ.index(j, i, 0);
                    for (int d = 0; d < D; ++d) {
                        dot += f[d] * t[d];
                        wnorm2 += f[d] * f[d];
                    }
                }
            }
            const T denom = std::sqrt(tnorm2) * std::sqrt(wnorm2);
            out.at(y, x, 0) = denom > T(0) ? scale * std::clamp(dot / denom, T(-1), T(1)) : T(0);
        }
    }
    return out;
}

template <typename T>
MatchGrads<T> cosine_match_backward(const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                    const Grid3<T>& grad_out) {
    check_depths(features, templ);
    const int H = features.height, W = features.width, D = features.depth;
    if (grad_out.height != H || grad_out.width != W || grad_out.depth != 1) {
        throw ConfigError("cosine_match_backward: gradient shape mismatch");
    }
    const int th = templ.height, tw = templ.width;
    const int oy = th / 2, ox = tw / 2;
    T tnorm2 = T(0);
    for (T v : templ.values) tnorm2 += v * v;
    const T tnorm = std::sqrt(tnorm2);
    MatchGrads<T> g{Grid3<T>(H, W, D), Grid3<T>(th, tw, D), T(0)};
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            T dot = T(0), wnorm2 = T(0);
            for (int j = 0; j < th; ++j) {
                const int yy = y + j - oy;
                if (yy < 0 || yy >= H) continue;
                for (int i = 0; i < tw; ++i) {
                    const int xx = x + i - ox;
                    if (xx < 0 || xx >= W) continue;
                    const T* f = features.values.data() + features.index(yy, xx, 0);
                    const T* t = templ.values.data() + templ.index(j, i, 0);
                    for (int d = 0; d < D; ++d) {
                        dot += f[d] * t[d];
                        wnorm2 += f[d] * f[d];
                    }
                }
            }
            const T wnorm = std::sqrt(wnorm2);
            if (!(tnorm > T(0)) || !(wnorm > T(0))) continue;
            const T cosv = dot / (tnorm * wnorm);
            const T go = grad_out.at(y, x, 0);
            g.scale += go * cosv;
            const T k = go * scale;
            const T inv = T(1) / (tnorm * wnorm);
            const T cw = cosv / wnorm2;
            // The template norm covers every entry, including those that fall off the map here.
            const T kct = k * cosv / tnorm2;
            for (std::size_t n = 0; n < templ.values.size(); ++n) g.templ.values[n] -= kct * templ.values[n];
            for (int j = 0; j < th; ++j) {
                const int yy = y + j - oy;
                if (yy < 0 || yy >= H) continue;
                for (int i = 0; i < tw; ++i) {
                    const int xx = x + i - ox;
                    if (xx < 0 || xx >= W) continue;
                    const T* f = features.values.data() + features.index(yy, xx, 0);
                    const T* t = templ.values.data() + templ.index(j, i, 0);
                    T* gf = g.features.values.data() + g.features.index(yy, xx, 0);
                    T* gt = g.templ.values.data() + g.templ.index(j, i, 0);
                    for (int d = 0; d < D; ++d) {
                        gf[d] += k * (t[d] * inv - cw * f[d]);
                        gt[d] += k * f[d] * inv;
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
Grid3<T> compute_match(MatchVariant v, const Grid3<T>& features, const Grid3<T>& templ, T scale) {
    switch (v) {
        case MatchVariant::none: return {};
        case MatchVariant::tm_cos: return cosine_match(features, templ, scale);
        case MatchVariant::pm: return prototype_match(features, templ, scale);
        case MatchVariant::tm_only:
        case MatchVariant::tm: return template_match(features, templ, scale);
    }
    return {};
}

template <typename T>
MatchGrads<T> compute_match_backward(MatchVariant v, const Grid3<T>& features, const Grid3<T>& templ, T scale,
                                     const Grid3<T>& grad_out) {
    switch (v) {
        case MatchVariant::none:
            return {Grid3<T>(features.height, features.width, features.depth),
                    Grid3<T>(templ.height, templ.width, templ.depth), T(0)};
        case MatchVariant::tm_cos: return cosine_match_backward(features, templ, scale, grad_out);
        case MatchVariant::pm: return prototype_match_backward(features, templ, scale, grad_out);
        case MatchVariant::tm_only:
        case MatchVariant::tm: return template_match_backward(features, templ, scale, grad_out);
    }
    return {};
}

template <typename T>
Grid3<T> build_head_input(const Grid3<T>& features, const Grid3<T>& match, MatchVariant v) {
    switch (v) {
        case MatchVariant::none: return features;
        case MatchVariant::tm_only:
            if (match.height != features.height || match.width != features.width) {
                throw ConfigError("build_head_input: match map " + shape_string(match) + " vs features " +
                                  shape_string(features));
            }
            return match;
        default: return concat_channels(match, features);
    }
}

template <typename T>
void split_head_input_grad(const Grid3<T>& grad, MatchVariant v, int feature_depth, Grid3<T>& grad_match,
                           Grid3<T>& grad_features) {
    switch (v) {
        case MatchVariant::none:
            grad_match = Grid3<T>(grad.height, grad.width, 0);
            grad_features = grad;
            return;
        case MatchVariant::tm_only:
            grad_match = grad;
            grad_features = Grid3<T>(grad.height, grad.width, feature_depth);
            return;
        default: split_channels(grad, grad.depth - feature_depth, grad_match, grad_features);
    }
}

#define TMR_INSTANTIATE_MATCHING(T)                                                                              \
    template Grid3<T> template_match(const Grid3<T>&, const Grid3<T>&, T);                                       \
    template Grid3<T> prototype_match(const Grid3<T>&, const Grid3<T>&, T);                                      \
    template Grid3<T> cosine_match(const Grid3<T>&, const Grid3<T>&, T);                                         \
    template MatchGrads<T> template_match_backward(const Grid3<T>&, const Grid3<T>&, T, const Grid3<T>&);        \
    template MatchGrads<T> prototype_match_backward(const Grid3<T>&, const Grid3<T>&, T, const Grid3<T>&);       \
    template MatchGrads<T> cosine_match_backward(const Grid3<T>&, const Grid3<T>&, T, const Grid3<T>&);          \
    template Grid3<T> compute_match(MatchVariant, const Grid3<T>&, const Grid3<T>&, T);                          \
    template MatchGrads<T> compute_match_backward(MatchVariant, const Grid3<T>&, const Grid3<T>&, T,             \
                                                  const Grid3<T>&);                                              \
    template Grid3<T> build_head_input(const Grid3<T>&, const Grid3<T>&, MatchVariant);                          \
    template void split_head_input_grad(const Grid3<T>&, MatchVariant, int, Grid3<T>&, Grid3<T>&);

TMR_INSTANTIATE_MATCHING(float)
TMR_INSTANTIATE_MATCHING(double)

}  // namespace tmr
