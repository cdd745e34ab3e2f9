#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tmr/grid.hpp"

namespace tmr {

enum class LayerKind { conv3x3, linear, scalar };

/// Learnable tensor pair (weights, bias) with gradient buffers of the same shapes.
///
/// Layouts:
///  - conv3x3: weights [ky][kx][c_in][c_out], bias [c_out]
///  - linear:  weights [c_in][c_out],         bias [c_out]
///  - scalar:  weights [1],                   no bias
///
/// Backward passes accumulate into the gradient buffers; a frozen layer
/// (`trainable == false`) never receives gradient.
template <typename T>
struct LayerParams {
    std::string name;
    LayerKind kind = LayerKind::linear;
    int in = 0;
    int out = 0;
    bool trainable = true;
    std::vector<T> weights;
    std::vector<T> bias;
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;

    static LayerParams conv3x3(std::string name, int c_in, int c_out);
    static LayerParams linear(std::string name, int c_in, int c_out);
    static LayerParams scalar(std::string name, T value);

    [[nodiscard]] std::size_t parameter_count() const { return weights.size() + bias.size(); }
    void zero_grad();

    /// He-uniform weights for fan_in, zero bias.
    void init_kaiming(std::mt19937_64& rng, double leaky_slope = 0.01);
};

template <typename To, typename From>
LayerParams<To> params_cast(const LayerParams<From>& p) {
    LayerParams<To> out;
    out.name = p.name;
    out.kind = p.kind;
    out.in = p.in;
    out.out = p.out;
    out.trainable = p.trainable;
    out.weights.assign(p.weights.begin(), p.weights.end());
    out.bias.assign(p.bias.begin(), p.bias.end());
    out.grad_weights.assign(p.grad_weights.begin(), p.grad_weights.end());
    out.grad_bias.assign(p.grad_bias.begin(), p.grad_bias.end());
    return out;
}

/// Zero-padded (pad 1) 3x3 cross-correlation. Output spatial size is ceil(H/stride) x ceil(W/stride).
template <typename T>
Grid3<T> conv3x3_forward(const Grid3<T>& input, const LayerParams<T>& params, int stride = 1);

/// Returns dL/dinput (empty grid when `need_input_grad` is false) and accumulates
/// dL/dweights, dL/dbias into `params`.
template <typename T>
Grid3<T> conv3x3_backward(const Grid3<T>& input, LayerParams<T>& params, const Grid3<T>& grad_out,
                          int stride = 1, bool need_input_grad = true);

/// Per-position affine map across channels: out(y,x) = W^T in(y,x) + b.
template <typename T>
Grid3<T> linear_forward(const Grid3<T>& input, const LayerParams<T>& params);

template <typename T>
Grid3<T> linear_backward(const Grid3<T>& input, LayerParams<T>& params, const Grid3<T>& grad_out,
                         bool need_input_grad = true);

template <typename T>
Grid3<T> leaky_relu(const Grid3<T>& input, T slope = T(0.01));

template <typename T>
Grid3<T> leaky_relu_backward(const Grid3<T>& input, const Grid3<T>& grad_out, T slope = T(0.01));

template <typename T>
Grid3<T> sigmoid(const Grid3<T>& input);

/// Takes the forward *output* of sigmoid.
template <typename T>
Grid3<T> sigmoid_backward(const Grid3<T>& output, const Grid3<T>& grad_out);

/// Channel-wise bilinear resize, align-corners convention.
template <typename T>
Grid3<T> bilinear_resize(const Grid3<T>& input, int new_height, int new_width);

template <typename T>
Grid3<T> bilinear_resize_backward(const Grid3<T>& grad_out, int in_height, int in_width);

/// Channel concatenation [a; b] and its split.
template <typename T>
Grid3<T> concat_channels(const Grid3<T>& a, const Grid3<T>& b);

template <typename T>
void split_channels(const Grid3<T>& grad, int depth_a, Grid3<T>& grad_a, Grid3<T>& grad_b);

}  // namespace tmr
