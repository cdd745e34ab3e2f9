#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmr/grid.hpp"
#include "tmr/layers.hpp"

namespace tmr {

enum class FeatureSource : std::uint8_t { precomputed, tiny_backbone };

/// Feature grid plus its pixel stride. Cell (x, y) covers image pixels
/// [x*stride, (x+1)*stride) and is centered at (x + 0.5) * stride.
template <typename T>
struct FeatureMapT {
    Grid3<T> grid;
    double stride = 1.0;
    FeatureSource source = FeatureSource::precomputed;
    int scale_id = 0;

    [[nodiscard]] int height() const { return grid.height; }
    [[nodiscard]] int width() const { return grid.width; }
    [[nodiscard]] int depth() const { return grid.depth; }
};

using FeatureMap = FeatureMapT<float>;

struct BackboneConfig {
    FeatureSource mode = FeatureSource::tiny_backbone;
    /// Image channels for the tiny backbone, feature depth for precomputed maps.
    int input_channels = 3;
    std::array<int, 3> widths{16, 32, 64};
    int projection_out = 512;
    /// Longer-side resolution after projection; 0 keeps the native resolution.
    int upsample_to = 128;
    double leaky_slope = 0.01;

    [[nodiscard]] int raw_depth() const {
        return mode == FeatureSource::tiny_backbone ? widths[2] : input_channels;
    }
};

inline constexpr int kTinyBackboneDownsample = 8;

/// Image pixels per feature cell when `cells` cells span `image_extent` pixels.
double stride_for(int image_extent, int cells);

// ---- "TMRF" feature dumps ---------------------------------------------------

void save_features(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap load_features(const std::filesystem::path& path);

// ---- "TMRC" checkpoints -----------------------------------------------------

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// ---- tiny trainable backbone ------------------------------------------------

template <typename T>
using TinyBackboneParams = std::array<LayerParams<T>, 3>;

template <typename T>
TinyBackboneParams<T> make_tiny_backbone(const BackboneConfig& cfg);

/// Intermediate activations kept for the backward pass.
template <typename T>
struct TinyBackboneCache {
    std::array<Grid3<T>, 3> inputs;
    std::array<Grid3<T>, 3> pre_activations;
};

/// Three [conv3x3 stride 2 -> LeakyReLU] stages. Image sides must be multiples of 8.
template <typename T>
FeatureMapT<T> tiny_backbone_forward(const Grid3<T>& image, const TinyBackboneParams<T>& params,
                                     double leaky_slope = 0.01, TinyBackboneCache<T>* cache = nullptr);

/// Accumulates parameter gradients; returns nothing since images are not trained.
template <typename T>
void tiny_backbone_backward(const TinyBackboneCache<T>& cache, TinyBackboneParams<T>& params,
                            const Grid3<T>& grad_features, double leaky_slope = 0.01);

// ---- channel projection + bilinear upsampling ----------------------------------

/// Target (height, width) for upsampling: longer side becomes `upsample_to`, aspect kept.
std::array<int, 2> upsample_shape(int height, int width, int upsample_to);

template <typename T>
FeatureMapT<T> project_and_upsample(const FeatureMapT<T>& fm, const BackboneConfig& cfg, const LayerParams<T>& proj);

/// Gradient w.r.t. the raw map; accumulates into `proj`.
template <typename T>
Grid3<T> project_and_upsample_backward(const FeatureMapT<T>& fm, const BackboneConfig& cfg, LayerParams<T>& proj,
                                       const Grid3<T>& grad_out, bool need_input_grad);

}  // namespace tmr
