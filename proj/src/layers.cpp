#include "tmr/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace tmr {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

int conv_out_extent(int extent, int stride) { return (extent + stride - 1) / stride; }

// Plain row-order loop: Eigen's vectorized reductions peel unaligned leading elements, which makes
// the summation order (and the rounding) depend on where the buffer happens to live.
template <typename T>
void accumulate_bias_grad(const Eigen::Map<const MatR<T>>& g, Eigen::Map<RowVec<T>>& gb) {
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
        for (Eigen::Index c = 0; c < g.cols(); ++c) gb(c) += g(r, c);
    }
}

template <typename T>
void check_conv(const Grid3<T>& input, const LayerParams<T>& p, int stride) {
    if (p.kind != LayerKind::conv3x3) {
        throw ConfigError("conv3x3: layer '" + p.name + "' is not a 3x3 convolution");
    }
    if (input.depth != p.in) {
        throw ConfigError("conv3x3: layer '" + p.name + "' expects " + std::to_string(p.in) +
                          " input channels, got " + std::to_string(input.depth));
    }
    if (stride < 1) {
        throw ConfigError("conv3x3: stride must be >= 1");
    }
}

// Patch matrix with one row per output cell and (ky, kx, c) columns; padding reads zero.
template <typename T>
MatR<T> im2col(const Grid3<T>& input, int stride, int out_h, int out_w) {
    const int c = input.depth;
    MatR<T> cols = MatR<T>::Zero(static_cast<Eigen::Index>(out_h) * out_w, 9 * c);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            T* row = cols.data() + (static_cast<Eigen::Index>(oy) * out_w + ox) * 9 * c;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= input.height) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= input.width) continue;
                    const T* src = input.values.data() + input.index(iy, ix, 0);
                    std::copy(src, src + c, row + (ky * 3 + kx) * c);
                }
            }
        }
    }
    return cols;
}

template <typename T>
void col2im(const MatR<T>& cols, int stride, Grid3<T>& grad_in, int out_h, int out_w) {
    const int c = grad_in.depth;
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const T* row = cols.data() + (static_cast<Eigen::Index>(oy) * out_w + ox) * 9 * c;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= grad_in.height) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= grad_in.width) continue;
                    T* dst = grad_in.values.data() + grad_in.index(iy, ix, 0);
                    const T* src = row + (ky * 3 + kx) * c;
                    for (int k = 0; k < c; ++k) dst[k] += src[k];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
LayerParams<T> LayerParams<T>::conv3x3(std::string name, int c_in, int c_out) {
    if (c_in <= 0 || c_out <= 0) throw ConfigError("conv3x3: channel counts must be positive");
    LayerParams p;
    p.name = std::move(name);
    p.kind = LayerKind::conv3x3;
    p.in = c_in;
    p.out = c_out;
    p.weights.assign(static_cast<std::size_t>(9) * c_in * c_out, T(0));
    p.bias.assign(c_out, T(0));
    p.zero_grad();
    return p;
}

template <typename T>
LayerParams<T> LayerParams<T>::linear(std::string name, int c_in, int c_out) {
    if (c_in <= 0 || c_out <= 0) throw ConfigError("linear: channel counts must be positive");
    LayerParams p;
    p.name = std::move(name);
    p.kind = LayerKind::linear;
    p.in = c_in;
    p.out = c_out;
    p.weights.assign(static_cast<std::size_t>(c_in) * c_out, T(0));
    p.bias.assign(c_out, T(0));
    p.zero_grad();
    return p;
}

template <typename T>
LayerParams<T> LayerParams<T>::scalar(std::string name, T value) {
    LayerParams p;
    p.name = std::move(name);
    p.kind = LayerKind::scalar;
    p.in = 1;
    p.out = 1;
    p.weights.assign(1, value);
    p.zero_grad();
    return p;
}

template <typename T>
void LayerParams<T>::zero_grad() {
    grad_weights.assign(weights.size(), T(0));
    grad_bias.assign(bias.size(), T(0));
}

template <typename T>
void LayerParams<T>::init_kaiming(std::mt19937_64& rng, double leaky_slope) {
    if (kind == LayerKind::scalar) return;
    const double fan_in = kind == LayerKind::conv3x3 ? 9.0 * in : static_cast<double>(in);
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    const double bound = gain * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : weights) w = static_cast<T>(dist(rng));
    std::fill(bias.begin(), bias.end(), T(0));
}

template <typename T>
Grid3<T> conv3x3_forward(const Grid3<T>& input, const LayerParams<T>& params, int stride) {
    check_conv(input, params, stride);
    const int out_h = conv_out_extent(input.height, stride);
    const int out_w = conv_out_extent(input.width, stride);
    Grid3<T> out(out_h, out_w, params.out);
    if (out.empty()) return out;

    const MatR<T> cols = im2col(input, stride, out_h, out_w);
    Eigen::Map<const MatR<T>> w(params.weights.data(), 9 * params.in, params.out);
    Eigen::Map<const RowVec<T>> b(params.bias.data(), params.out);
    Eigen::Map<MatR<T>> o(out.values.data(), static_cast<Eigen::Index>(out_h) * out_w, params.out);
    o.noalias() = cols * w;
    o.rowwise() += b;
    return out;
}

template <typename T>
Grid3<T> conv3x3_backward(const Grid3<T>& input, LayerParams<T>& params, const Grid3<T>& grad_out,
                          int stride, bool need_input_grad) {
    check_conv(input, params, stride);
    const int out_h = conv_out_extent(input.height, stride);
    const int out_w = conv_out_extent(input.width, stride);
    if (grad_out.height != out_h || grad_out.width != out_w || grad_out.depth != params.out) {
        throw ConfigError("conv3x3_backward: gradient shape " + shape_string(grad_out) + " does not match output " +
                          shape_string(out_h, out_w, params.out));
    }
    Grid3<T> grad_in;
    if (need_input_grad) grad_in = Grid3<T>(input.height, input.width, input.depth);
    if (grad_out.empty()) return grad_in;

    const Eigen::Index rows = static_cast<Eigen::Index>(out_h) * out_w;
    Eigen::Map<const MatR<T>> g(grad_out.values.data(), rows, params.out);
    Eigen::Map<const MatR<T>> w(params.weights.data(), 9 * params.in, params.out);

    if (params.trainable) {
        const MatR<T> cols = im2col(input, stride, out_h, out_w);
        Eigen::Map<MatR<T>> gw(params.grad_weights.data(), 9 * params.in, params.out);
        Eigen::Map<RowVec<T>> gb(params.grad_bias.data(), params.out);
        gw.noalias() += cols.transpose() * g;
        accumulate_bias_grad(g, gb);
    }
    if (need_input_grad) {
        const MatR<T> gcols = g * w.transpose();
        col2im(gcols, stride, grad_in, out_h, out_w);
    }
    return grad_in;
}

template <typename T>
Grid3<T> linear_forward(const Grid3<T>& input, const LayerParams<T>& params) {
    if (params.kind != LayerKind::linear) {
        throw ConfigError("linear: layer '" + params.name + "' is not linear");
    }
    if (input.depth != params.in) {
        throw ConfigError("linear: layer '" + params.name + "' expects depth " + std::to_string(params.in) +
                          ", got " + std::to_string(input.depth));
    }
    Grid3<T> out(input.height, input.width, params.out);
    if (out.empty()) return out;
    const Eigen::Index rows = static_cast<Eigen::Index>(input.cells());
    Eigen::Map<const MatR<T>> x(input.values.data(), rows, params.in);
    Eigen::Map<const MatR<T>> w(params.weights.data(), params.in, params.out);
    Eigen::Map<const RowVec<T>> b(params.bias.data(), params.out);
    Eigen::Map<MatR<T>> o(out.values.data(), rows, params.out);
    o.noalias() = x * w;
    o.rowwise() += b;
    return out;
}

template <typename T>
Grid3<T> linear_backward(const Grid3<T>& input, LayerParams<T>& params, const Grid3<T>& grad_out,
                         bool need_input_grad) {
    if (input.depth != params.in || grad_out.depth != params.out || grad_out.height != input.height ||
        grad_out.width != input.width) {
        throw ConfigError("linear_backward: shape mismatch for layer '" + params.name + "'");
    }
    Grid3<T> grad_in;
    if (need_input_grad) grad_in = Grid3<T>(input.height, input.width, input.depth);
    if (grad_out.empty()) return grad_in;
    const Eigen::Index rows = static_cast<Eigen::Index>(input.cells());
    Eigen::Map<const MatR<T>> x(input.values.data(), rows, params.in);
    Eigen::Map<const MatR<T>> g(grad_out.values.data(), rows, params.out);
    Eigen::Map<const MatR<T>> w(params.weights.data(), params.in, params.out);
    if (params.trainable) {
        Eigen::Map<MatR<T>> gw(params.grad_weights.data(), params.in, params.out);
        Eigen::Map<RowVec<T>> gb(params.grad_bias.data(), params.out);
        gw.noalias() += x.transpose() * g;
        accumulate_bias_grad(g, gb);
    }
    if (need_input_grad) {
        Eigen::Map<MatR<T>> gi(grad_in.values.data(), rows, params.in);
        gi.noalias() = g * w.transpose();
    }
    return grad_in;
}

template <typename T>
Grid3<T> leaky_relu(const Grid3<T>& input, T slope) {
    Grid3<T> out = input;
    for (auto& v : out.values) v = v > T(0) ? v : v * slope;
    return out;
}

template <typename T>
Grid3<T> leaky_relu_backward(const Grid3<T>& input, const Grid3<T>& grad_out, T slope) {
    if (!input.same_shape(grad_out)) throw ConfigError("leaky_relu_backward: shape mismatch");
    Grid3<T> g = grad_out;
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (!(input.values[i] > T(0))) g.values[i] *= slope;
    }
    return g;
}

template <typename T>
Grid3<T> sigmoid(const Grid3<T>& input) {
    Grid3<T> out = input;
    for (auto& v : out.values) {
        // Split on sign so exp never overflows.
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    return out;
}

template <typename T>
Grid3<T> sigmoid_backward(const Grid3<T>& output, const Grid3<T>& grad_out) {
    if (!output.same_shape(grad_out)) throw ConfigError("sigmoid_backward: shape mismatch");
    Grid3<T> g = grad_out;
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const T s = output.values[i];
        g.values[i] *= s * (T(1) - s);
    }
    return g;
}

namespace {

struct Tap {
    int i0, i1;
    double frac;
};

// Align-corners source coordinate for each destination index.
std::vector<Tap> resize_taps(int in, int out) {
    std::vector<Tap> taps(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (int j = 0; j < out; ++j) {
        const double src = j * scale;
        int i0 = static_cast<int>(std::floor(src));
        i0 = std::clamp(i0, 0, in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[j] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

template <typename T>
Grid3<T> bilinear_resize(const Grid3<T>& input, int new_height, int new_width) {
    if (new_height < 1 || new_width < 1) {
        throw ArgumentError("bilinear_resize: target size must be at least 1x1");
    }
    if (input.height < 1 || input.width < 1) {
        throw ArgumentError("bilinear_resize: empty input");
    }
    if (new_height == input.height && new_width == input.width) return input;
    const auto ty = resize_taps(input.height, new_height);
    const auto tx = resize_taps(input.width, new_width);
    Grid3<T> out(new_height, new_width, input.depth);
    const int d = input.depth;
    for (int y = 0; y < new_height; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        for (int x = 0; x < new_width; ++x) {
            const T fx = static_cast<T>(tx[x].frac);
            const T* a = input.values.data() + input.index(ty[y].i0, tx[x].i0, 0);
            const T* b = input.values.data() + input.index(ty[y].i0, tx[x].i1, 0);
            const T* c = input.values.data() + input.index(ty[y].i1, tx[x].i0, 0);
            const T* e = input.values.data() + input.index(ty[y].i1, tx[x].i1, 0);
            T* o = out.values.data() + out.index(y, x, 0);
            for (int k = 0; k < d; ++k) {
                const T top = a[k] + (b[k] - a[k]) * fx;
                const T bottom = c[k] + (e[k] - c[k]) * fx;
                o[k] = top + (bottom - top) * fy;
            }
        }
    }
    return out;
}

template <typename T>
Grid3<T> bilinear_resize_backward(const Grid3<T>& grad_out, int in_height, int in_width) {
    if (in_height < 1 || in_width < 1) throw ArgumentError("bilinear_resize_backward: empty input shape");
    if (grad_out.height == in_height && grad_out.width == in_width) return grad_out;
    const auto ty = resize_taps(in_height, grad_out.height);
    const auto tx = resize_taps(in_width, grad_out.width);
    Grid3<T> g(in_height, in_width, grad_out.depth);
    const int d = grad_out.depth;
    for (int y = 0; y < grad_out.height; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        for (int x = 0; x < grad_out.width; ++x) {
            const T fx = static_cast<T>(tx[x].frac);
            const T* go = grad_out.values.data() + grad_out.index(y, x, 0);
            T* a = g.values.data() + g.index(ty[y].i0, tx[x].i0, 0);
            T* b = g.values.data() + g.index(ty[y].i0, tx[x].i1, 0);
            T* c = g.values.data() + g.index(ty[y].i1, tx[x].i0, 0);
            T* e = g.values.data() + g.index(ty[y].i1, tx[x].i1, 0);
            for (int k = 0; k < d; ++k) {
                const T v = go[k];
                a[k] += v * (T(1) - fx) * (T(1) - fy);
                b[k] += v * fx * (T(1) - fy);
                c[k] += v * (T(1) - fx) * fy;
                e[k] += v * fx * fy;
            }
        }
    }
    return g;
}

template <typename T>
Grid3<T> concat_channels(const Grid3<T>& a, const Grid3<T>& b) {
    if (a.height != b.height || a.width != b.width) {
        throw ConfigError("concat_channels: spatial mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    Grid3<T> out(a.height, a.width, a.depth + b.depth);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            auto src_a = a.pixel(y, x);
            auto src_b = b.pixel(y, x);
            auto dst = out.pixel(y, x);
            std::copy(src_a.begin(), src_a.end(), dst.begin());
            std::copy(src_b.begin(), src_b.end(), dst.begin() + a.depth);
        }
    }
    return out;
}

template <typename T>
void split_channels(const Grid3<T>& grad, int depth_a, Grid3<T>& grad_a, Grid3<T>& grad_b) {
    if (depth_a < 0 || depth_a > grad.depth) throw ConfigError("split_channels: bad split depth");
    grad_a = Grid3<T>(grad.height, grad.width, depth_a);
    grad_b = Grid3<T>(grad.height, grad.width, grad.depth - depth_a);
    for (int y = 0; y < grad.height; ++y) {
        for (int x = 0; x < grad.width; ++x) {
            auto src = grad.pixel(y, x);
            std::copy(src.begin(), src.begin() + depth_a, grad_a.pixel(y, x).begin());
            std::copy(src.begin() + depth_a, src.end(), grad_b.pixel(y, x).begin());
        }
    }
}

#define TMR_INSTANTIATE_LAYERS(T)                                                                        \
    template struct LayerParams<T>;                                                                      \
    template Grid3<T> conv3x3_forward(const Grid3<T>&, const LayerParams<T>&, int);                      \
    template Grid3<T> conv3x3_backward(const Grid3<T>&, LayerParams<T>&, const Grid3<T>&, int, bool);    \
    template Grid3<T> linear_forward(const Grid3<T>&, const LayerParams<T>&);                            \
    template Grid3<T> linear_backward(const Grid3<T>&, LayerParams<T>&, const Grid3<T>&, bool);          \
    template Grid3<T> leaky_relu(const Grid3<T>&, T);                                                    \
    template Grid3<T> leaky_relu_backward(const Grid3<T>&, const Grid3<T>&, T);                          \
    template Grid3<T> sigmoid(const Grid3<T>&);                                                          \
    template Grid3<T> sigmoid_backward(const Grid3<T>&, const Grid3<T>&);                                \
    template Grid3<T> bilinear_resize(const Grid3<T>&, int, int);                                        \
    template Grid3<T> bilinear_resize_backward(const Grid3<T>&, int, int);                               \
    template Grid3<T> concat_channels(const Grid3<T>&, const Grid3<T>&);                                 \
    template void split_channels(const Grid3<T>&, int, Grid3<T>&, Grid3<T>&);

TMR_INSTANTIATE_LAYERS(float)
TMR_INSTANTIATE_LAYERS(double)

}  // namespace tmr
