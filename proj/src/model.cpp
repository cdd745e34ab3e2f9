#include "tmr/model.hpp"

#include <cmath>
#include <random>

#include "tmr/errors.hpp"

namespace tmr {

namespace {

constexpr float kConfigRecordVersion = 1.0F;
constexpr std::size_t kConfigRecordSize = 14;

// Output weights of the box branch start small so initial decodes sit near the exemplar size.
constexpr double kBoxOutputInitScale = 0.01;

template <typename T>
void collect(std::vector<LayerParams<T>*>& out, ModelParams<T>& p, bool with_backbone) {
    if (with_backbone) {
        for (auto& stage : p.backbone) out.push_back(&stage);
    }
    out.push_back(&p.projection);
    out.push_back(&p.tm_scale);
    out.push_back(&p.box.conv);
    out.push_back(&p.box.linear);
    out.push_back(&p.pres.conv);
    out.push_back(&p.pres.linear);
}

template <typename To, typename From>
HeadBranch<To> branch_cast(const HeadBranch<From>& b) {
    return {params_cast<To>(b.conv), params_cast<To>(b.linear)};
}

std::vector<std::uint32_t> layer_dims(const LayerParams<float>& p) {
    switch (p.kind) {
        case LayerKind::conv3x3:
            return {3U, 3U, static_cast<std::uint32_t>(p.in), static_cast<std::uint32_t>(p.out)};
        case LayerKind::linear:
            return {static_cast<std::uint32_t>(p.in), static_cast<std::uint32_t>(p.out)};
        case LayerKind::scalar:
            return {1U};
    }
    return {};
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

template <typename T>
void append_signs(std::vector<std::uint8_t>& out, const Grid3<T>& g) {
    for (T v : g.values) out.push_back(v > T(0) ? 1 : 0);
}

// Orderings that select the active branch of every min/max inside gIoU.
template <typename T>
void append_giou_pieces(std::vector<std::uint8_t>& out, const Grid3<T>& boxes, const TargetMaps& targets) {
    const std::size_t cells = boxes.cells();
    for (std::size_t c = 0; c < cells; ++c) {
        if (targets.assignment[c] < 0) continue;
        const T* b = boxes.values.data() + c * 4;
        const double* g = targets.box_target.values.data() + c * 4;
        const BoxXYWH p{b[0], b[1], b[2], b[3]};
        const BoxXYWH t{g[0], g[1], g[2], g[3]};
        const double iw = std::min(p.right(), t.right()) - std::max(p.left(), t.left());
        const double ih = std::min(p.bottom(), t.bottom()) - std::max(p.top(), t.top());
        out.push_back(static_cast<std::uint8_t>((p.left() > t.left()) | ((p.right() < t.right()) << 1) |
                                                ((p.top() > t.top()) << 2) | ((p.bottom() < t.bottom()) << 3) |
                                                ((iw > 0) << 4) | ((ih > 0) << 5)));
    }
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    const BackboneConfig& bb = cfg_.backbone;
    if (bb.projection_out <= 0 || bb.input_channels <= 0) {
        throw ConfigError("model: projection_out and input_channels must be positive");
    }
    if (cfg_.presence_prior <= 0.0 || cfg_.presence_prior >= 1.0) {
        throw ConfigError("model: presence_prior must lie in (0, 1)");
    }
    const bool tiny = bb.mode == FeatureSource::tiny_backbone;
    if (tiny) {
        p_.backbone = make_tiny_backbone<T>(bb);
        for (auto& stage : p_.backbone) stage.trainable = !cfg_.freeze_backbone;
    }
    p_.projection = LayerParams<T>::linear("projection", bb.raw_depth(), bb.projection_out);
    p_.tm_scale = LayerParams<T>::scalar("tm_scale", T(1));
    const int in = cfg_.head_depth();
    p_.box = HeadBranch<T>::make("box", in, 4);
    p_.pres = HeadBranch<T>::make("presence", in, 1);
}

template <typename T>
void Model<T>::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double slope = cfg_.backbone.leaky_slope;
    for (LayerParams<T>* p : parameters()) {
        if (p->kind != LayerKind::scalar) p->init_kaiming(rng, slope);
    }
    p_.tm_scale.weights[0] = T(1);
    for (auto& w : p_.box.linear.weights) w = static_cast<T>(w * kBoxOutputInitScale);
    const double prior = cfg_.presence_prior;
    p_.pres.linear.bias[0] = static_cast<T>(std::log(prior / (1.0 - prior)));
    zero_grad();
}

template <typename T>
std::vector<LayerParams<T>*> Model<T>::parameters() {
    std::vector<LayerParams<T>*> out;
    collect(out, p_, cfg_.backbone.mode == FeatureSource::tiny_backbone);
    return out;
}

template <typename T>
std::vector<const LayerParams<T>*> Model<T>::parameters() const {
    std::vector<LayerParams<T>*> tmp;
    collect(tmp, const_cast<ModelParams<T>&>(p_), cfg_.backbone.mode == FeatureSource::tiny_backbone);
    return {tmp.begin(), tmp.end()};
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->parameter_count();
    return n;
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
FeatureMapT<T> Model<T>::features(const FeatureMapT<T>& input) const {
    const BackboneConfig& bb = cfg_.backbone;
    if (input.grid.depth != bb.input_channels) {
        throw ArgumentError("model: input depth " + std::to_string(input.grid.depth) + " does not match " +
                            std::to_string(bb.input_channels));
    }
    if (bb.mode == FeatureSource::tiny_backbone) {
        FeatureMapT<T> raw = tiny_backbone_forward(input.grid, p_.backbone, bb.leaky_slope);
        raw.stride *= input.stride;
        raw.scale_id = input.scale_id;
        return project_and_upsample(raw, bb, p_.projection);
    }
    return project_and_upsample(input, bb, p_.projection);
}

template <typename T>
HeadOutput<T> Model<T>::predict(const FeatureMapT<T>& fm, const BoxXYWH& exemplar) const {
    const T slope = static_cast<T>(cfg_.backbone.leaky_slope);
    Grid3<T> match;
    if (cfg_.match != MatchVariant::none) {
        const Template<T> tpl = roi_align_extract(fm, exemplar);
        match = compute_match(cfg_.match, fm.grid, tpl.grid, p_.tm_scale.weights[0]);
    }
    const Grid3<T> head_in = build_head_input(fm.grid, match, cfg_.match);
    HeadOutput<T> out;
    out.regression = regress(head_in, p_.box, slope);
    out.presence = presence(head_in, p_.pres, slope);
    out.boxes = decode_boxes(out.regression, exemplar, fm.stride, cfg_.decode);
    out.stride = fm.stride;
    return out;
}

template <typename T>
LossBreakdown Model<T>::forward_backward(const FeatureMapT<T>& input, const BoxXYWH& exemplar,
                                         std::span<const BoxXYWH> gt, const LossConfig& loss, bool backward,
                                         std::vector<std::uint8_t>* pieces) {
    const BackboneConfig& bb = cfg_.backbone;
    const T slope = static_cast<T>(bb.leaky_slope);
    const bool tiny = bb.mode == FeatureSource::tiny_backbone;
    if (input.grid.depth != bb.input_channels) {
        throw ArgumentError("model: input depth " + std::to_string(input.grid.depth) + " does not match " +
                            std::to_string(bb.input_channels));
    }

    // Forward.
    TinyBackboneCache<T> bb_cache;
    FeatureMapT<T> raw;
    if (tiny) {
        raw = tiny_backbone_forward(input.grid, p_.backbone, bb.leaky_slope, &bb_cache);
        raw.stride *= input.stride;
    }
    const FeatureMapT<T>& raw_ref = tiny ? raw : input;
    const FeatureMapT<T> fm = project_and_upsample(raw_ref, bb, p_.projection);

    Template<T> tpl;
    Grid3<T> match;
    const T scale = p_.tm_scale.weights[0];
    if (cfg_.match != MatchVariant::none) {
        tpl = roi_align_extract(fm, exemplar);
        match = compute_match(cfg_.match, fm.grid, tpl.grid, scale);
    }
    const Grid3<T> head_in = build_head_input(fm.grid, match, cfg_.match);
    BranchCache<T> box_cache;
    BranchCache<T> pres_cache;
    const Grid3<T> reg = regress(head_in, p_.box, slope, &box_cache);
    const Grid3<T> pres = presence(head_in, p_.pres, slope, &pres_cache);
    const Grid3<T> boxes = decode_boxes(reg, exemplar, fm.stride, cfg_.decode);

    const TargetMaps targets = extended_center_set(gt, fm.stride, fm.height(), fm.width(), loss.delta);
    const LossValue<T> lp = presence_loss(pres, targets, loss.reduction);
    const LossValue<T> lb = box_loss(boxes, targets, loss.reduction);

    if (pieces != nullptr) {
        pieces->clear();
        if (tiny) {
            for (const auto& z : bb_cache.pre_activations) append_signs(*pieces, z);
        }
        append_signs(*pieces, box_cache.pre_activation);
        append_signs(*pieces, pres_cache.pre_activation);
        for (T v : pres.values) {
            pieces->push_back(static_cast<std::uint8_t>((v < kProbabilityClamp) | ((v > 1 - kProbabilityClamp) << 1)));
        }
        append_giou_pieces(*pieces, boxes, targets);
    }

    LossBreakdown out;
    out.presence = lp.value;
    out.box = lb.value;
    out.total = total_loss(lp.value, lb.value);
    out.positives = targets.positives;
    if (!backward) return out;

    // Backward.
    const Grid3<T> g_logit = sigmoid_backward(pres, lp.grad);
    Grid3<T> g_head = branch_backward(head_in, p_.pres, pres_cache, g_logit, slope);
    const Grid3<T> g_reg = decode_boxes_backward(reg, exemplar, fm.stride, cfg_.decode, lb.grad);
    g_head += branch_backward(head_in, p_.box, box_cache, g_reg, slope);

    Grid3<T> g_match;
    Grid3<T> g_fm;
    split_head_input_grad(g_head, cfg_.match, fm.depth(), g_match, g_fm);
    if (cfg_.match != MatchVariant::none) {
        const MatchGrads<T> mg = compute_match_backward(cfg_.match, fm.grid, tpl.grid, scale, g_match);
        if (g_fm.empty()) {
            g_fm = mg.features;
        } else {
            g_fm += mg.features;
        }
        if (p_.tm_scale.trainable) p_.tm_scale.grad_weights[0] += mg.scale;
        if (cfg_.template_grad) {
            g_fm += roi_align_backward(fm.height(), fm.width(), fm.stride, exemplar, mg.templ);
        }
    }
    const bool train_backbone = tiny && !cfg_.freeze_backbone;
    const Grid3<T> g_raw = project_and_upsample_backward(raw_ref, bb, p_.projection, g_fm, train_backbone);
    if (train_backbone) tiny_backbone_backward(bb_cache, p_.backbone, g_raw, bb.leaky_slope);
    return out;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
    Model<U> out(cfg_);
    ModelParams<U>& q = out.params();
    for (std::size_t i = 0; i < p_.backbone.size(); ++i) q.backbone[i] = params_cast<U>(p_.backbone[i]);
    q.projection = params_cast<U>(p_.projection);
    q.tm_scale = params_cast<U>(p_.tm_scale);
    q.box = branch_cast<U>(p_.box);
    q.pres = branch_cast<U>(p_.pres);
    return out;
}

template <typename T>
std::vector<NamedTensor> Model<T>::to_tensors() const {
    std::vector<NamedTensor> out;
    out.push_back(config_tensor(cfg_));
    for (const auto* p : parameters()) {
        const LayerParams<float> pf = params_cast<float>(*p);
        out.push_back(layer_weight_tensor(pf));
        if (!pf.bias.empty()) {
            out.push_back({pf.name + ".bias", {static_cast<std::uint32_t>(pf.bias.size())}, pf.bias});
        }
    }
    return out;
}

template <typename T>
Model<T> Model<T>::from_tensors(const std::vector<NamedTensor>& tensors) {
    const NamedTensor* meta = find_tensor(tensors, "meta.config");
    if (meta == nullptr) throw FormatError("checkpoint has no meta.config record");
    Model<float> mf(config_from_tensor(*meta));
    for (auto* p : mf.parameters()) load_layer(*p, tensors);
    if constexpr (std::is_same_v<T, float>) {
        return mf;
    } else {
        return mf.template cast<T>();
    }
}

NamedTensor config_tensor(const ModelConfig& cfg) {
    const BackboneConfig& bb = cfg.backbone;
    NamedTensor t;
    t.name = "meta.config";
    t.data = {kConfigRecordVersion,
              static_cast<float>(bb.mode),
              static_cast<float>(bb.input_channels),
              static_cast<float>(bb.widths[0]),
              static_cast<float>(bb.widths[1]),
              static_cast<float>(bb.widths[2]),
              static_cast<float>(bb.projection_out),
              static_cast<float>(bb.upsample_to),
              static_cast<float>(bb.leaky_slope),
              static_cast<float>(cfg.match),
              static_cast<float>(cfg.decode),
              cfg.template_grad ? 1.0F : 0.0F,
              cfg.freeze_backbone ? 1.0F : 0.0F,
              static_cast<float>(cfg.presence_prior)};
    t.dims = {static_cast<std::uint32_t>(t.data.size())};
    return t;
}

ModelConfig config_from_tensor(const NamedTensor& t) {
    if (t.data.size() != kConfigRecordSize || t.data[0] != kConfigRecordVersion) {
        throw FormatError("meta.config: unsupported record (size " + std::to_string(t.data.size()) + ")");
    }
    const auto as_int = [&](std::size_t i) { return static_cast<int>(std::lround(t.data[i])); };
    ModelConfig cfg;
    const int mode = as_int(1);
    const int match = as_int(9);
    const int decode = as_int(10);
    if (mode < 0 || mode > 1 || match < 0 || match > 4 || decode < 0 || decode > 3) {
        throw FormatError("meta.config: enum value out of range");
    }
    cfg.backbone.mode = static_cast<FeatureSource>(mode);
    cfg.backbone.input_channels = as_int(2);
    cfg.backbone.widths = {as_int(3), as_int(4), as_int(5)};
    cfg.backbone.projection_out = as_int(6);
    cfg.backbone.upsample_to = as_int(7);
    cfg.backbone.leaky_slope = t.data[8];
    cfg.match = static_cast<MatchVariant>(match);
    cfg.decode = static_cast<DecodeVariant>(decode);
    cfg.template_grad = t.data[11] != 0.0F;
    cfg.freeze_backbone = t.data[12] != 0.0F;
    cfg.presence_prior = t.data[13];
    return cfg;
}

NamedTensor layer_weight_tensor(const LayerParams<float>& p) {
    return {p.name + ".weight", layer_dims(p), p.weights};
}

void load_layer(LayerParams<float>& p, const std::vector<NamedTensor>& tensors) {
    const NamedTensor* w = find_tensor(tensors, p.name + ".weight");
    if (w == nullptr) throw FormatError("checkpoint is missing " + p.name + ".weight");
    if (w->dims != layer_dims(p) || w->data.size() != p.weights.size()) {
        throw FormatError("checkpoint tensor " + w->name + " has the wrong shape");
    }
    p.weights = w->data;
    if (!p.bias.empty()) {
        const NamedTensor* b = find_tensor(tensors, p.name + ".bias");
        if (b == nullptr || b->data.size() != p.bias.size()) {
            throw FormatError("checkpoint is missing or misshapes " + p.name + ".bias");
        }
        p.bias = b->data;
    }
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;

}  // namespace tmr
