#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmr/annotation.hpp"
#include "tmr/evaluate.hpp"
#include "tmr/gradcheck.hpp"
#include "tmr/infer.hpp"
#include "tmr/model.hpp"
#include "tmr/optim.hpp"

namespace tmr {

/// Images (or precomputed maps) with their annotations, held in memory.
struct Dataset {
    struct Item {
        FeatureMap input;  ///< model input: image at stride 1, or a precomputed map
        SampleAnnotation annotation;
    };
    std::vector<Item> items;

    /// (item, pattern index) pairs, one per training query.
    [[nodiscard]] std::vector<std::pair<int, int>> queries() const;
};

/// Loads every annotation document under `dir` and the PNG it names (relative to `dir`).
/// Images are edge-padded to multiples of 8 for the tiny backbone.
Dataset load_dataset(const std::filesystem::path& dir);

/// Generates `count` samples of a preset straight into memory.
Dataset synthesize_dataset(const std::string& preset_name, std::uint64_t base_seed, int count);

enum class LrSchedule { constant, cosine };

struct TrainConfig {
    ModelConfig model;
    AdamWConfig optim;
    LossConfig loss;
    LrSchedule schedule = LrSchedule::constant;
    /// Logical batch, realized by gradient accumulation.
    int batch_size = 16;
    /// Optimizer steps.
    int steps = 1000;
    std::uint64_t seed = 0;
    /// Run T = double end to end (slow; used for exact reproducibility checks).
    bool double_precision = false;
    int log_every = 1;
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_path;
    int eval_every = 0;
    InferConfig eval_infer;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Reads the fields present in `j` over the defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InferConfig& cfg);
InferConfig infer_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);

struct StepLog {
    int step = 0;
    double presence = 0.0;
    double box = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<StepLog> steps;
    std::vector<std::pair<int, EvalReport>> evals;
    double seconds = 0.0;
};

nlohmann::json to_json(const StepLog& s);

struct TrainResult {
    Model<float> model;
    OptimState optim;
    TrainLog log;
};

struct TrainHooks {
    /// Called with each JSON log line (steps and evaluations).
    std::function<void(const nlohmann::json&)> on_log;
    const Dataset* eval_set = nullptr;
};

/// The query and exemplar drawn for accumulation slot `slot` of optimizer step `step`.
struct Draw {
    int item = 0;
    int pattern = 0;
    int exemplar = 0;
};
Draw draw_sample(const Dataset& data, const std::vector<std::pair<int, int>>& queries, std::uint64_t seed, int step,
                 int slot);

/// Trains from `init` (fresh weights from cfg.seed when absent) or resumes from `resume`.
/// Throws NumericError on a non-finite loss after writing the last good checkpoint (when a
/// checkpoint path is configured).
TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {},
                  const std::optional<Model<float>>& init = std::nullopt,
                  const std::optional<OptimState>& resume = std::nullopt);

/// Model weights plus optimizer state, bit-exact.
std::vector<NamedTensor> training_checkpoint(const Model<float>& model, const OptimState& optim);
OptimState optim_state_from_tensors(const std::vector<NamedTensor>& tensors, const AdamWConfig& config);

/// Final detections for every (image, pattern) query, boxes clamped to the image.
std::vector<PredictionSet> predict_dataset(const Model<float>& model, const Dataset& data, const InferConfig& cfg);

EvalReport evaluate_model(const Model<float>& model, const Dataset& data, const InferConfig& cfg);

// ---- gradient audit -----------------------------------------------------------

struct AuditOptions {
    GradCheckOptions check;
    LossConfig loss;
    /// Runs between the analytic backward pass and the comparison; used for mutation tests.
    std::function<void(Model<double>&)> tamper;
};

struct AuditReport {
    GradCheckReport check;
    /// Largest |gradient| over backbone parameters (0 when frozen or absent).
    double backbone_grad_max = 0.0;
    double tolerance = 1e-4;

    [[nodiscard]] bool passed() const { return check.passed(tolerance); }
};

/// Full-pipeline analytic vs central-difference comparison for every parameter group, in double.
AuditReport audit_gradients(const Model<double>& model, const FeatureMap& input, const BoxXYWH& exemplar,
                            const std::vector<BoxXYWH>& gt, const AuditOptions& options = {});

nlohmann::json to_json(const AuditReport& r);

// ---- ablations ---------------------------------------------------------------

struct AblationVariant {
    std::string name;
    MatchVariant match = MatchVariant::tm;
    DecodeVariant decode = DecodeVariant::full;
};

struct AblationRow {
    AblationVariant variant;
    EvalReport report;
    double train_seconds = 0.0;
};

/// One model per variant, same seed and data order; evaluated on `test`.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      const Dataset& train_set, const Dataset& test_set, const InferConfig& infer,
                                      const std::function<void(const nlohmann::json&)>& on_log = {});

nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace tmr
