#include "tmr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "tmr/errors.hpp"
#include "tmr/image.hpp"
#include "tmr/synth.hpp"

namespace tmr {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

FeatureMap prepare_image(const RgbImage& img) {
    return image_to_input(pad_to_multiple(img, kTinyBackboneDownsample));
}

// Doubles (and the step counter) are stored bit-for-bit inside float tensors.
std::vector<float> pack_doubles(const std::vector<double>& v) {
    std::vector<float> out(v.size() * 2);
    std::memcpy(out.data(), v.data(), v.size() * sizeof(double));
    return out;
}

std::vector<double> unpack_doubles(const std::vector<float>& v) {
    if (v.size() % 2 != 0) throw FormatError("packed double tensor has odd length");
    std::vector<double> out(v.size() / 2);
    std::memcpy(out.data(), v.data(), out.size() * sizeof(double));
    return out;
}

NamedTensor packed(const std::string& name, const std::vector<double>& v) {
    NamedTensor t{name, {}, pack_doubles(v)};
    t.dims = {static_cast<std::uint32_t>(t.data.size())};
    return t;
}

double scheduled_lr(const TrainConfig& cfg, int step) {
    if (cfg.schedule == LrSchedule::constant || cfg.steps <= 1) return cfg.optim.lr;
    const double progress = static_cast<double>(step) / (cfg.steps - 1);
    return cfg.optim.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
FeatureMapT<T> cast_map(const FeatureMap& fm) {
    FeatureMapT<T> out;
    out.grid = grid_cast<T>(fm.grid);
    out.stride = fm.stride;
    out.source = fm.source;
    out.scale_id = fm.scale_id;
    return out;
}

void check_compatible(const ModelConfig& a, const ModelConfig& b) {
    const bool same = a.match == b.match && a.decode == b.decode && a.backbone.mode == b.backbone.mode &&
                      a.backbone.projection_out == b.backbone.projection_out &&
                      a.backbone.input_channels == b.backbone.input_channels &&
                      a.backbone.widths == b.backbone.widths;
    if (!same) {
        throw ConfigError("initial model (" + to_string(a.match) + ", " + to_string(a.decode) + ", D=" +
                          std::to_string(a.backbone.projection_out) + ") does not match the training configuration (" +
                          to_string(b.match) + ", " + to_string(b.decode) + ", D=" +
                          std::to_string(b.backbone.projection_out) + ")");
    }
}

template <typename T>
TrainResult train_impl(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks,
                       const std::optional<Model<float>>& init, const std::optional<OptimState>& resume) {
    cfg.validate();
    const auto queries = data.queries();
    if (queries.empty()) throw ArgumentError("training set has no queries");

    Model<float> start(cfg.model);
    if (init) {
        check_compatible(init->config(), cfg.model);
        start = *init;
    } else {
        start.init(cfg.seed);
    }
    Model<T> model = start.template cast<T>();
    OptimState optim = resume ? *resume : OptimState{};
    optim.config = cfg.optim;

    std::vector<FeatureMapT<T>> converted;
    if constexpr (!std::is_same_v<T, float>) {
        for (const auto& item : data.items) converted.push_back(cast_map<T>(item.input));
    }
    const auto input_of = [&](int i) -> const FeatureMapT<T>& {
        if constexpr (std::is_same_v<T, float>) {
            return data.items[static_cast<std::size_t>(i)].input;
        } else {
            return converted[static_cast<std::size_t>(i)];
        }
    };
    const auto save = [&](const Model<T>& m) {
        if (cfg.checkpoint_path.empty()) return;
        save_checkpoint(cfg.checkpoint_path, training_checkpoint(m.template cast<float>(), optim));
    };

    TrainResult result;
    const auto t0 = Clock::now();
    auto params = model.parameters();
    const T inv_batch = T(1) / static_cast<T>(cfg.batch_size);
    for (int step = static_cast<int>(optim.step); step < cfg.steps; ++step) {
        optim.config.lr = scheduled_lr(cfg, step);
        StepLog entry;
        entry.step = step;
        entry.lr = optim.config.lr;
        for (int slot = 0; slot < cfg.batch_size; ++slot) {
            const Draw d = draw_sample(data, queries, cfg.seed, step, slot);
            const PatternAnnotation& pat =
                data.items[static_cast<std::size_t>(d.item)].annotation.patterns[static_cast<std::size_t>(d.pattern)];
            LossBreakdown lb;
            try {
                lb = model.forward_backward(input_of(d.item), pat.boxes[static_cast<std::size_t>(d.exemplar)],
                                            pat.boxes, cfg.loss);
            } catch (const NumericError& e) {
                model.zero_grad();
                save(model);
                throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
            }
            entry.presence += lb.presence / cfg.batch_size;
            entry.box += lb.box / cfg.batch_size;
            entry.total += lb.total / cfg.batch_size;
        }
        for (auto* p : params) {
            for (auto& g : p->grad_weights) g *= inv_batch;
            for (auto& g : p->grad_bias) g *= inv_batch;
        }
        optimizer_step<T>(params, optim);
        entry.seconds = seconds_since(t0);

        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            result.log.steps.push_back(entry);
            if (hooks.on_log) hooks.on_log(to_json(entry));
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) save(model);
        if (cfg.eval_every > 0 && hooks.eval_set != nullptr && (step + 1) % cfg.eval_every == 0) {
            const EvalReport rep = evaluate_model(model.template cast<float>(), *hooks.eval_set, cfg.eval_infer);
            result.log.evals.emplace_back(step + 1, rep);
            if (hooks.on_log) hooks.on_log(json{{"step", step + 1}, {"eval", to_json(rep)}});
        }
    }
    result.log.seconds = seconds_since(t0);
    result.model = model.template cast<float>();
    result.optim = optim;
    if (!cfg.checkpoint_path.empty()) save(model);
    return result;
}

// Key-checked reads over defaults.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename V>
    void read(const char* key, V& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<V>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError(where_ + ": unknown field \"" + k + "\"");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

// ---- datasets -------------------------------------------------------------------

std::vector<std::pair<int, int>> Dataset::queries() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (std::size_t p = 0; p < items[i].annotation.patterns.size(); ++p) {
            if (!items[i].annotation.patterns[p].boxes.empty()) {
                out.emplace_back(static_cast<int>(i), static_cast<int>(p));
            }
        }
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset data;
    for (auto& ann : load_annotations(dir)) {
        const RgbImage img = read_png(dir / ann.image);
        if (img.width != ann.width || img.height != ann.height) {
            throw FormatError(ann.image + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                              " but the annotation says " + std::to_string(ann.width) + "x" +
                              std::to_string(ann.height));
        }
        data.items.push_back({prepare_image(img), std::move(ann)});
    }
    return data;
}

Dataset synthesize_dataset(const std::string& preset_name, std::uint64_t base_seed, int count) {
    Dataset data;
    for (int i = 0; i < count; ++i) {
        GeneratedSample s = generate(preset(preset_name, base_seed + static_cast<std::uint64_t>(i)));
        s.annotation.image = preset_name + "-" + std::to_string(base_seed + static_cast<std::uint64_t>(i));
        data.items.push_back({prepare_image(s.image), std::move(s.annotation)});
    }
    return data;
}

// ---- configuration ----------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(optim.lr > 0)) throw ConfigError("lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (!(loss.delta > 0 && loss.delta <= 0.5)) throw ConfigError("delta must lie in (0, 0.5]");
}

json to_json(const ModelConfig& cfg) {
    const BackboneConfig& b = cfg.backbone;
    return {{"backbone",
             {{"mode", b.mode == FeatureSource::tiny_backbone ? "tiny_backbone" : "precomputed"},
              {"input_channels", b.input_channels},
              {"widths", b.widths},
              {"projection_out", b.projection_out},
              {"upsample_to", b.upsample_to},
              {"leaky_slope", b.leaky_slope}}},
            {"match", to_string(cfg.match)},
            {"decode", to_string(cfg.decode)},
            {"template_grad", cfg.template_grad},
            {"freeze_backbone", cfg.freeze_backbone},
            {"presence_prior", cfg.presence_prior}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    Fields f(j, "model");
    if (const json* bj = f.sub("backbone")) {
        Fields b(*bj, "model.backbone");
        std::string mode = cfg.backbone.mode == FeatureSource::tiny_backbone ? "tiny_backbone" : "precomputed";
        b.read("mode", mode);
        if (mode == "tiny_backbone") {
            cfg.backbone.mode = FeatureSource::tiny_backbone;
        } else if (mode == "precomputed") {
            cfg.backbone.mode = FeatureSource::precomputed;
        } else {
            throw ConfigError("model.backbone.mode: expected tiny_backbone or precomputed, got " + mode);
        }
        b.read("input_channels", cfg.backbone.input_channels);
        b.read("widths", cfg.backbone.widths);
        b.read("projection_out", cfg.backbone.projection_out);
        b.read("upsample_to", cfg.backbone.upsample_to);
        b.read("leaky_slope", cfg.backbone.leaky_slope);
        b.finish();
    }
    std::string match = to_string(cfg.match);
    std::string decode = to_string(cfg.decode);
    f.read("match", match);
    f.read("decode", decode);
    try {
        cfg.match = parse_match_variant(match);
        cfg.decode = parse_decode_variant(decode);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    f.read("template_grad", cfg.template_grad);
    f.read("freeze_backbone", cfg.freeze_backbone);
    f.read("presence_prior", cfg.presence_prior);
    f.finish();
    return cfg;
}

json to_json(const InferConfig& cfg) {
    return {{"tau", cfg.tau}, {"nms_iou", cfg.nms_iou}, {"scales", cfg.scales}};
}

InferConfig infer_config_from_json(const json& j) {
    InferConfig cfg;
    Fields f(j, "infer");
    f.read("tau", cfg.tau);
    f.read("nms_iou", cfg.nms_iou);
    f.read("scales", cfg.scales);
    f.finish();
    cfg.validate();
    return cfg;
}

json to_json(const TrainConfig& cfg) {
    return {{"model", to_json(cfg.model)},
            {"optim",
             {{"lr", cfg.optim.lr},
              {"weight_decay", cfg.optim.weight_decay},
              {"beta1", cfg.optim.beta1},
              {"beta2", cfg.optim.beta2},
              {"eps", cfg.optim.eps}}},
            {"loss", {{"delta", cfg.loss.delta}, {"reduction", to_string(cfg.loss.reduction)}}},
            {"schedule", cfg.schedule == LrSchedule::cosine ? "cosine" : "constant"},
            {"batch_size", cfg.batch_size},
            {"steps", cfg.steps},
            {"seed", cfg.seed},
            {"double_precision", cfg.double_precision},
            {"log_every", cfg.log_every},
            {"checkpoint_every", cfg.checkpoint_every},
            {"checkpoint_path", cfg.checkpoint_path.string()},
            {"eval_every", cfg.eval_every},
            {"eval_infer", to_json(cfg.eval_infer)}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    Fields f(j, "train");
    if (const json* m = f.sub("model")) cfg.model = model_config_from_json(*m);
    if (const json* o = f.sub("optim")) {
        Fields g(*o, "train.optim");
        g.read("lr", cfg.optim.lr);
        g.read("weight_decay", cfg.optim.weight_decay);
        g.read("beta1", cfg.optim.beta1);
        g.read("beta2", cfg.optim.beta2);
        g.read("eps", cfg.optim.eps);
        g.finish();
    }
    if (const json* l = f.sub("loss")) {
        Fields g(*l, "train.loss");
        g.read("delta", cfg.loss.delta);
        std::string red = to_string(cfg.loss.reduction);
        g.read("reduction", red);
        try {
            cfg.loss.reduction = parse_loss_reduction(red);
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
        g.finish();
    }
    std::string schedule = cfg.schedule == LrSchedule::cosine ? "cosine" : "constant";
    f.read("schedule", schedule);
    if (schedule != "cosine" && schedule != "constant") throw ConfigError("schedule must be constant or cosine");
    cfg.schedule = schedule == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
    f.read("batch_size", cfg.batch_size);
    f.read("steps", cfg.steps);
    f.read("seed", cfg.seed);
    f.read("double_precision", cfg.double_precision);
    f.read("log_every", cfg.log_every);
    f.read("checkpoint_every", cfg.checkpoint_every);
    std::string ckpt = cfg.checkpoint_path.string();
    f.read("checkpoint_path", ckpt);
    cfg.checkpoint_path = ckpt;
    f.read("eval_every", cfg.eval_every);
    if (const json* e = f.sub("eval_infer")) cfg.eval_infer = infer_config_from_json(*e);
    f.finish();
    cfg.validate();
    return cfg;
}

json to_json(const StepLog& s) {
    return {{"step", s.step}, {"L_P", s.presence}, {"L_B", s.box}, {"loss", s.total}, {"lr", s.lr},
            {"seconds", s.seconds}};
}

// ---- training ---------------------------------------------------------------------

Draw draw_sample(const Dataset& data, const std::vector<std::pair<int, int>>& queries, std::uint64_t seed, int step,
                 int slot) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(slot)};
    std::mt19937_64 rng(seq);
    const auto& q = queries[std::uniform_int_distribution<std::size_t>(0, queries.size() - 1)(rng)];
    const auto& pat = data.items[static_cast<std::size_t>(q.first)].annotation.patterns[static_cast<std::size_t>(q.second)];
    const int ex = std::uniform_int_distribution<int>(0, static_cast<int>(pat.boxes.size()) - 1)(rng);
    return {q.first, q.second, ex};
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks,
                  const std::optional<Model<float>>& init, const std::optional<OptimState>& resume) {
    if (cfg.double_precision) return train_impl<double>(cfg, data, hooks, init, resume);
    return train_impl<float>(cfg, data, hooks, init, resume);
}

std::vector<NamedTensor> training_checkpoint(const Model<float>& model, const OptimState& optim) {
    std::vector<NamedTensor> out = model.to_tensors();
    out.push_back(packed("optim.step", {static_cast<double>(optim.step)}));
    for (const auto& [name, m] : optim.moments) {
        out.push_back(packed("optim." + name + ".m_weights", m.m_weights));
        out.push_back(packed("optim." + name + ".v_weights", m.v_weights));
        out.push_back(packed("optim." + name + ".m_bias", m.m_bias));
        out.push_back(packed("optim." + name + ".v_bias", m.v_bias));
    }
    return out;
}

OptimState optim_state_from_tensors(const std::vector<NamedTensor>& tensors, const AdamWConfig& config) {
    OptimState state;
    state.config = config;
    bool have_step = false;
    for (const auto& t : tensors) {
        if (t.name.rfind("optim.", 0) != 0) continue;
        if (t.name == "optim.step") {
            const auto v = unpack_doubles(t.data);
            if (v.size() != 1) throw FormatError("optim.step must hold one value");
            state.step = static_cast<std::int64_t>(v[0]);
            have_step = true;
            continue;
        }
        const std::string rest = t.name.substr(6);
        const auto dot = rest.rfind('.');
        if (dot == std::string::npos) throw FormatError("unexpected optimizer tensor " + t.name);
        Moments& m = state.moments[rest.substr(0, dot)];
        const std::string field = rest.substr(dot + 1);
        if (field == "m_weights") {
            m.m_weights = unpack_doubles(t.data);
        } else if (field == "v_weights") {
            m.v_weights = unpack_doubles(t.data);
        } else if (field == "m_bias") {
            m.m_bias = unpack_doubles(t.data);
        } else if (field == "v_bias") {
            m.v_bias = unpack_doubles(t.data);
        } else {
            throw FormatError("unexpected optimizer tensor " + t.name);
        }
    }
    if (!have_step) throw FormatError("checkpoint holds no optimizer state");
    return state;
}

std::vector<PredictionSet> predict_dataset(const Model<float>& model, const Dataset& data, const InferConfig& cfg) {
    std::vector<PredictionSet> out;
    for (const auto& item : data.items) {
        const FeatureMap fm = model.features(item.input);
        for (const auto& pat : item.annotation.patterns) {
            PredictionSet p;
            p.image = item.annotation.image;
            p.pattern = pat.id;
            if (!pat.exemplars.empty()) {
                for (const Detection& d : detect_multi_scale(fm, pat.exemplars, model, cfg)) {
                    p.boxes.push_back(clamp_to_image(d.box, item.annotation.width, item.annotation.height));
                    p.scores.push_back(d.score);
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

EvalReport evaluate_model(const Model<float>& model, const Dataset& data, const InferConfig& cfg) {
    std::vector<SampleAnnotation> gts;
    gts.reserve(data.items.size());
    for (const auto& item : data.items) gts.push_back(item.annotation);
    return evaluate(predict_dataset(model, data, cfg), gts);
}

// ---- gradient audit ---------------------------------------------------------------

AuditReport audit_gradients(const Model<double>& model, const FeatureMap& input, const BoxXYWH& exemplar,
                            const std::vector<BoxXYWH>& gt, const AuditOptions& options) {
    Model<double> m = model;
    const FeatureMapT<double> in = cast_map<double>(input);
    m.zero_grad();
    m.forward_backward(in, exemplar, gt, options.loss, true);
    if (options.tamper) options.tamper(m);

    AuditReport report;
    std::vector<GradTarget> targets;
    for (LayerParams<double>* p : m.parameters()) {
        if (p->name.rfind("backbone.", 0) == 0) {
            for (double g : p->grad_weights) report.backbone_grad_max = std::max(report.backbone_grad_max, std::abs(g));
            for (double g : p->grad_bias) report.backbone_grad_max = std::max(report.backbone_grad_max, std::abs(g));
        }
        if (p->trainable) append_targets(targets, *p);
    }
    std::vector<std::uint8_t> pieces;
    const auto loss = [&]() { return m.forward_backward(in, exemplar, gt, options.loss, false, &pieces).total; };
    GradCheckOptions check = options.check;
    if (!check.piece_signature) check.piece_signature = [&]() { return pieces; };
    report.check = grad_check(loss, targets, check);
    return report;
}

json to_json(const AuditReport& r) {
    json targets = json::array();
    for (const auto& t : r.check.targets) {
        targets.push_back({{"name", t.name}, {"rel_error", t.rel_error}, {"max_abs_error", t.max_abs_error},
                           {"checked", t.checked}, {"skipped", t.skipped}});
    }
    return {{"passed", r.passed()},
            {"tolerance", r.tolerance},
            {"max_rel_error", r.check.max_rel_error},
            {"worst_target", r.check.worst_target},
            {"backbone_grad_max", r.backbone_grad_max},
            {"targets", targets}};
}

// ---- ablations --------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      const Dataset& train_set, const Dataset& test_set, const InferConfig& infer,
                                      const std::function<void(const json&)>& on_log) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        TrainConfig cfg = base;
        cfg.model.match = v.match;
        cfg.model.decode = v.decode;
        TrainHooks hooks;
        if (on_log) {
            hooks.on_log = [&](const json& line) {
                json tagged = line;
                tagged["variant"] = v.name;
                on_log(tagged);
            };
        }
        spdlog::info("ablation: training variant {} ({}, {})", v.name, to_string(v.match), to_string(v.decode));
        const TrainResult res = train(cfg, train_set, hooks);
        AblationRow row{v, evaluate_model(res.model, test_set, infer), res.log.seconds};
        if (on_log) on_log(json{{"variant", v.name}, {"eval", to_json(row.report)}});
        rows.push_back(std::move(row));
    }
    return rows;
}

json to_json(const std::vector<AblationRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        json row = to_json(r.report);
        row["variant"] = r.variant.name;
        row["match"] = to_string(r.variant.match);
        row["decode"] = to_string(r.variant.decode);
        row["train_seconds"] = r.train_seconds;
        out.push_back(row);
    }
    return out;
}

}  // namespace tmr
