#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tmr/backbone.hpp"
#include "tmr/box.hpp"
#include "tmr/head.hpp"
#include "tmr/loss.hpp"
#include "tmr/matching.hpp"
#include "tmr/templates.hpp"

namespace tmr {

struct ModelConfig {
    BackboneConfig backbone;
    MatchVariant match = MatchVariant::tm;
    DecodeVariant decode = DecodeVariant::full;
    /// Let template-extraction gradients flow back into the feature map.
    bool template_grad = true;
    bool freeze_backbone = false;
    /// Initial presence probability encoded in the classifier bias.
    double presence_prior = 0.1;

    [[nodiscard]] int feature_depth() const { return backbone.projection_out; }
    [[nodiscard]] int head_depth() const { return head_input_depth(match, feature_depth()); }
};

struct LossConfig {
    double delta = MarginConfig{}.delta;
    LossReduction reduction = LossReduction::mean;
};

struct LossBreakdown {
    double presence = 0.0;
    double box = 0.0;
    double total = 0.0;
    int positives = 0;
};

template <typename T>
struct ModelParams {
    TinyBackboneParams<T> backbone;
    LayerParams<T> projection;
    LayerParams<T> tm_scale;
    HeadBranch<T> box;
    HeadBranch<T> pres;
};

/// Everything the head produces for one exemplar on one feature map.
template <typename T>
struct HeadOutput {
    Grid3<T> regression;  ///< H x W x 4 raw (dx, dy, aw, ah)
    Grid3<T> presence;    ///< H x W x 1 in (0, 1)
    Grid3<T> boxes;       ///< H x W x 4 decoded pixel boxes
    double stride = 1.0;
};

/// The detector: optional tiny backbone, projection/upsampling, template extraction,
/// matching, and the two head branches. T = float for training/inference, double for
/// gradient audits.
template <typename T>
class Model {
public:
    Model() : Model(ModelConfig{}) {}
    explicit Model(ModelConfig cfg);

    /// Kaiming-uniform weights from `seed`; small box-regression output weights; presence
    /// bias set to logit(presence_prior); tm_scale = 1.
    void init(std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const { return cfg_; }
    ModelParams<T>& params() { return p_; }
    const ModelParams<T>& params() const { return p_; }

    /// Learnable layers in a fixed order (backbone stages only in tiny-backbone mode).
    std::vector<LayerParams<T>*> parameters();
    std::vector<const LayerParams<T>*> parameters() const;
    [[nodiscard]] std::size_t parameter_count() const;
    void zero_grad();

    /// Raw input to F: an image (stride 1) through the tiny backbone, or a precomputed map;
    /// then projection and upsampling.
    FeatureMapT<T> features(const FeatureMapT<T>& input) const;

    HeadOutput<T> predict(const FeatureMapT<T>& features, const BoxXYWH& exemplar) const;

    /// Loss for one (input, exemplar, GT set) sample. With `backward`, gradients are
    /// accumulated into the parameters' buffers. `pieces`, when given, receives one byte per
    /// branch decision of the piecewise-smooth loss (LeakyReLU signs, probability clamps,
    /// gIoU edge orderings) so finite-difference checks can tell when they crossed a kink.
    LossBreakdown forward_backward(const FeatureMapT<T>& input, const BoxXYWH& exemplar,
                                   std::span<const BoxXYWH> gt, const LossConfig& loss, bool backward = true,
                                   std::vector<std::uint8_t>* pieces = nullptr);

    template <typename U>
    Model<U> cast() const;

    /// Parameters plus a "meta.config" record, ready for the TMRC writer.
    std::vector<NamedTensor> to_tensors() const;
    static Model from_tensors(const std::vector<NamedTensor>& tensors);

private:
    ModelConfig cfg_;
    ModelParams<T> p_;
};

/// Round-trips ModelConfig through a flat float record.
NamedTensor config_tensor(const ModelConfig& cfg);
ModelConfig config_from_tensor(const NamedTensor& t);

NamedTensor layer_weight_tensor(const LayerParams<float>& p);
void load_layer(LayerParams<float>& p, const std::vector<NamedTensor>& tensors);

}  // namespace tmr
