// Command-line entry points: generate, train, eval, detect, serve, audit.
//
// Exit codes: 0 success, 1 user error (bad flags, bad input files, invalid
// configuration), 2 internal error (numeric failure, failed gradient audit, anything
// unexpected).

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "tmr/errors.hpp"
#include "tmr/evaluate.hpp"
#include "tmr/image.hpp"
#include "tmr/service.hpp"
#include "tmr/synth.hpp"
#include "tmr/trainer.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

std::vector<double> split_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw tmr::ArgumentError("not a number: \"" + part + "\"");
        }
    }
    return out;
}

tmr::BoxXYWH parse_exemplar(const std::string& text) {
    const auto v = split_numbers(text);
    if (v.size() != 4) throw tmr::ArgumentError("exemplar must be cx,cy,w,h, got \"" + text + "\"");
    const tmr::BoxXYWH b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) throw tmr::ArgumentError("exemplar \"" + text + "\" needs positive width and height");
    return b;
}

tmr::Model<float> load_model(const std::string& path) {
    return tmr::Model<float>::from_tensors(tmr::load_checkpoint(path));
}

struct GenerateArgs {
    std::string preset = "lattice-easy";
    std::uint64_t seed = 0;
    int n = 1;
    std::string out;
};

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out = "model.tmrc";
    std::string log;
    std::string eval_data;
    std::string resume;
    std::string ablation;
    std::string ablation_test;
    std::optional<int> steps;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> match;
    std::optional<std::string> decode;
};

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string model;
    std::string data;
    std::string dump;
    double tau = 0.4;
};

struct DetectArgs {
    std::string image;
    std::vector<std::string> exemplars;
    std::string model;
    double tau = 0.4;
    std::string scales;
    bool single = false;
};

struct ServeArgs {
    std::vector<std::string> models;
    std::string host = "127.0.0.1";
    int port = 8080;
    double tau = 0.4;
};

struct AuditArgs {
    std::string model;
    std::uint64_t seed = 0;
    int samples = 1;
    std::size_t entries = 0;
};

int run_generate(const GenerateArgs& a) {
    tmr::generate_dataset(a.out, a.preset, a.seed, a.n);
    std::cout << json{{"out", a.out}, {"preset", a.preset}, {"samples", a.n}}.dump() << '\n';
    return 0;
}

tmr::TrainConfig train_config(const TrainArgs& a) {
    tmr::TrainConfig cfg;
    if (!a.config.empty()) cfg = tmr::train_config_from_json(tmr::load_json(a.config));
    if (a.steps) cfg.steps = *a.steps;
    if (a.lr) cfg.optim.lr = *a.lr;
    if (a.seed) cfg.seed = *a.seed;
    if (a.match) cfg.model.match = tmr::parse_match_variant(*a.match);
    if (a.decode) cfg.model.decode = tmr::parse_decode_variant(*a.decode);
    cfg.validate();
    return cfg;
}

int run_train(const TrainArgs& a) {
    tmr::TrainConfig cfg = train_config(a);
    const tmr::Dataset data = tmr::load_dataset(a.data);
    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) throw tmr::IoError("cannot write " + a.log);
    }
    const auto on_log = [&](const json& line) {
        if (log_file.is_open()) log_file << line.dump() << '\n' << std::flush;
    };

    if (!a.ablation.empty()) {
        std::vector<tmr::AblationVariant> variants;
        if (a.ablation == "matching") {
            variants = {{"e", tmr::MatchVariant::tm, cfg.model.decode},
                        {"d", tmr::MatchVariant::pm, cfg.model.decode},
                        {"a", tmr::MatchVariant::none, cfg.model.decode}};
        } else if (a.ablation == "decode") {
            variants = {{"d", cfg.model.match, tmr::DecodeVariant::full},
                        {"c", cfg.model.match, tmr::DecodeVariant::scale_only},
                        {"b", cfg.model.match, tmr::DecodeVariant::unconditioned},
                        {"a", cfg.model.match, tmr::DecodeVariant::none}};
        } else {
            throw tmr::ArgumentError("--ablation must be matching or decode");
        }
        if (a.ablation_test.empty()) throw tmr::ArgumentError("--ablation needs --test");
        const tmr::Dataset test = tmr::load_dataset(a.ablation_test);
        const auto rows = tmr::run_ablation(cfg, variants, data, test, cfg.eval_infer, on_log);
        const json table = tmr::to_json(rows);
        tmr::save_json(a.out, table);
        std::cout << table.dump() << '\n';
        return 0;
    }

    cfg.checkpoint_path = a.out;
    std::optional<tmr::Model<float>> init;
    std::optional<tmr::OptimState> resume;
    if (!a.resume.empty()) {
        const auto tensors = tmr::load_checkpoint(a.resume);
        init = tmr::Model<float>::from_tensors(tensors);
        resume = tmr::optim_state_from_tensors(tensors, cfg.optim);
    }
    tmr::Dataset eval_set;
    tmr::TrainHooks hooks;
    hooks.on_log = on_log;
    if (!a.eval_data.empty()) {
        eval_set = tmr::load_dataset(a.eval_data);
        hooks.eval_set = &eval_set;
    }
    const tmr::TrainResult result = tmr::train(cfg, data, hooks, init, resume);
    json summary{{"checkpoint", a.out}, {"steps", cfg.steps}, {"seconds", result.log.seconds}};
    if (!result.log.steps.empty()) summary["final"] = tmr::to_json(result.log.steps.back());
    std::cout << summary.dump() << '\n';
    return 0;
}

int run_eval(const EvalArgs& a) {
    const std::vector<tmr::SampleAnnotation> gts = tmr::load_annotations(a.gt.empty() ? a.data : a.gt);
    std::vector<tmr::PredictionSet> preds;
    if (!a.pred.empty()) {
        preds = tmr::predictions_from_json(tmr::load_json(a.pred));
    } else if (!a.model.empty() && !a.data.empty()) {
        tmr::InferConfig cfg;
        cfg.tau = a.tau;
        preds = tmr::predict_dataset(load_model(a.model), tmr::load_dataset(a.data), cfg);
        if (!a.dump.empty()) tmr::save_json(a.dump, tmr::to_json(preds));
    } else {
        throw tmr::ArgumentError("eval needs --pred and --gt, or --model and --data");
    }
    std::cout << tmr::to_json(tmr::evaluate(preds, gts)).dump() << '\n';
    return 0;
}

int run_detect(const DetectArgs& a) {
    const tmr::Model<float> model = load_model(a.model);
    std::vector<tmr::BoxXYWH> exemplars;
    for (const auto& e : a.exemplars) exemplars.push_back(parse_exemplar(e));
    if (a.single) exemplars.resize(1);
    tmr::InferConfig cfg;
    cfg.tau = a.tau;
    if (!a.scales.empty()) {
        for (double s : split_numbers(a.scales)) cfg.scales.push_back(static_cast<int>(s));
    }
    cfg.validate();
    const tmr::RgbImage image = tmr::read_png(a.image);
    const auto dets = tmr::detect_image(model, image, exemplars, cfg);
    std::cout << json{{"image", a.image},
                      {"width", image.width},
                      {"height", image.height},
                      {"tau", cfg.tau},
                      {"detections", tmr::detections_json(dets)}}
                     .dump()
              << '\n';
    return 0;
}

int run_serve(const ServeArgs& a) {
    std::vector<tmr::NamedModel> models;
    for (const auto& path : a.models) {
        tmr::Model<float> m = load_model(path);
        models.push_back({tmr::to_string(m.config().match), std::move(m)});
    }
    tmr::InferConfig defaults;
    defaults.tau = a.tau;
    tmr::DetectionService service(std::move(models), defaults);
    tmr::serve(service, a.host, a.port);
    return 0;
}

int run_audit(const AuditArgs& a) {
    tmr::Model<double> model;
    if (!a.model.empty()) {
        model = load_model(a.model).cast<double>();
    } else {
        tmr::ModelConfig cfg;
        cfg.backbone.widths = {4, 6, 8};
        cfg.backbone.projection_out = 6;
        cfg.backbone.upsample_to = 0;
        model = tmr::Model<double>(cfg);
        model.init(a.seed);
    }
    json reports = json::array();
    bool passed = true;
    for (int i = 0; i < a.samples; ++i) {
        tmr::GenSpec spec;
        spec.seed = a.seed + static_cast<std::uint64_t>(i);
        spec.width = 64;
        spec.height = 64;
        spec.rows = 2;
        spec.cols = 2;
        spec.size_min = 24;
        spec.size_max = 30;
        const tmr::GeneratedSample s = tmr::generate(spec);
        const auto& pat = s.annotation.patterns.front();
        tmr::AuditOptions opts;
        opts.check.max_entries_per_target = a.entries;
        opts.check.seed = spec.seed;
        const tmr::AuditReport r =
            tmr::audit_gradients(model, tmr::image_to_input(s.image), pat.exemplars.front(), pat.boxes, opts);
        passed = passed && r.passed();
        reports.push_back(tmr::to_json(r));
    }
    std::cout << json{{"passed", passed}, {"reports", reports}}.dump() << '\n';
    return passed ? 0 : kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot repeated-pattern detection by template matching and regression"};
    app.require_subcommand(1);
    spdlog::set_level(spdlog::level::warn);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset (PNG + JSON per sample)");
    generate->add_option("--preset", gen.preset, "lattice-easy or bigram")->capture_default_str();
    generate->add_option("--seed", gen.seed, "Seed of the first sample")->capture_default_str();
    generate->add_option("--n", gen.n, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();
    generate->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
    train->add_option("--data", tr.data, "Training dataset directory")->required();
    train->add_option("--config", tr.config, "JSON training configuration");
    train->add_option("--out", tr.out, "Checkpoint path (or ablation table with --ablation)")->capture_default_str();
    train->add_option("--log", tr.log, "Line-delimited JSON training log");
    train->add_option("--eval", tr.eval_data, "Dataset for periodic evaluation");
    train->add_option("--resume", tr.resume, "Checkpoint to resume from");
    train->add_option("--steps", tr.steps, "Optimizer steps");
    train->add_option("--lr", tr.lr, "Learning rate");
    train->add_option("--seed", tr.seed, "Seed");
    train->add_option("--match", tr.match, "Matching variant: none, tm_only, tm_cos, pm, tm");
    train->add_option("--decode", tr.decode, "Decode variant: none, unconditioned, scale_only, full");
    train->add_option("--ablation", tr.ablation, "Train one model per variant: matching or decode");
    train->add_option("--test", tr.ablation_test, "Test dataset for --ablation");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->add_option("--pred", ev.pred, "Prediction dump JSON");
    eval->add_option("--gt", ev.gt, "Annotation JSON file or dataset directory");
    eval->add_option("--model", ev.model, "Checkpoint to run instead of --pred");
    eval->add_option("--data", ev.data, "Dataset directory for --model");
    eval->add_option("--dump", ev.dump, "Write the predictions made with --model here");
    eval->add_option("--tau", ev.tau, "Presence threshold")->capture_default_str();

    DetectArgs de;
    auto* det = app.add_subcommand("detect", "Detect a pattern in one image");
    det->add_option("--image", de.image, "PNG image")->required();
    det->add_option("--exemplar", de.exemplars, "Exemplar box cx,cy,w,h (repeatable)")->required();
    det->add_option("--model", de.model, "Checkpoint")->required();
    det->add_option("--tau", de.tau, "Presence threshold")->capture_default_str();
    det->add_option("--scales", de.scales, "Comma-separated feature resolutions");
    det->add_flag("--single", de.single, "Use only the first exemplar");

    ServeArgs sv;
    auto* srv = app.add_subcommand("serve", "Run the HTTP detection service");
    srv->add_option("--model", sv.models, "Checkpoint (repeatable; keyed by matching variant)")->required();
    srv->add_option("--host", sv.host, "Bind address")->capture_default_str();
    srv->add_option("--port", sv.port, "Port")->capture_default_str();
    srv->add_option("--tau", sv.tau, "Default presence threshold")->capture_default_str();

    AuditArgs au;
    auto* audit = app.add_subcommand("audit", "Compare analytic gradients with finite differences");
    audit->add_option("--model", au.model, "Checkpoint (default: a small fresh model)");
    audit->add_option("--seed", au.seed, "Seed for the model and samples")->capture_default_str();
    audit->add_option("--samples", au.samples, "Number of samples")->capture_default_str();
    audit->add_option("--entries", au.entries, "Entries checked per tensor (0 = all)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUser;
    }

    try {
        if (*generate) return run_generate(gen);
        if (*train) return run_train(tr);
        if (*eval) return run_eval(ev);
        if (*det) return run_detect(de);
        if (*srv) return run_serve(sv);
        if (*audit) return run_audit(au);
    } catch (const tmr::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInternal;
    } catch (const tmr::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const tmr::ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const tmr::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const tmr::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const tmr::GenerationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUser;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInternal;
}
