#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "tmr/errors.hpp"
#include "tmr/trainer.hpp"

namespace tmr {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config(int steps) {
    TrainConfig cfg;
    cfg.model.backbone.widths = {4, 8, 8};
    cfg.model.backbone.projection_out = 8;
    cfg.model.backbone.upsample_to = 0;
    cfg.optim.lr = 1e-3;
    cfg.batch_size = 2;
    cfg.steps = steps;
    cfg.seed = 7;
    cfg.log_every = 1;
    return cfg;
}

const Dataset& tiny_data() {
    static const Dataset data = synthesize_dataset("lattice-easy", 500, 3);
    return data;
}

std::vector<float> flat_weights(const Model<float>& m) {
    std::vector<float> out;
    for (const auto* p : m.parameters()) {
        out.insert(out.end(), p->weights.begin(), p->weights.end());
        out.insert(out.end(), p->bias.begin(), p->bias.end());
    }
    return out;
}

TEST(Train, ZeroStepsReturnsTheInitialisation) {
    const TrainConfig cfg = tiny_config(0);
    const TrainResult r = train(cfg, tiny_data());
    Model<float> fresh(cfg.model);
    fresh.init(cfg.seed);
    EXPECT_EQ(flat_weights(r.model), flat_weights(fresh));
    EXPECT_TRUE(r.log.steps.empty());
}

TEST(Train, SameSeedGivesIdenticalLogsAndWeights) {
    TrainConfig cfg = tiny_config(3);
    cfg.double_precision = true;
    const TrainResult a = train(cfg, tiny_data());
    const TrainResult b = train(cfg, tiny_data());
    ASSERT_EQ(a.log.steps.size(), 3U);
    for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
        EXPECT_EQ(a.log.steps[i].total, b.log.steps[i].total);
        EXPECT_EQ(a.log.steps[i].presence, b.log.steps[i].presence);
    }
    EXPECT_EQ(flat_weights(a.model), flat_weights(b.model));
}

TEST(Train, ResumingFromACheckpointIsBitExact) {
    const fs::path dir = fs::temp_directory_path() / "tmr_unit";
    fs::create_directories(dir);
    const TrainResult full = train(tiny_config(4), tiny_data());

    TrainConfig half = tiny_config(2);
    half.checkpoint_path = dir / "half.tmrc";
    train(half, tiny_data());
    const auto tensors = load_checkpoint(half.checkpoint_path);
    const Model<float> model = Model<float>::from_tensors(tensors);
    const OptimState optim = optim_state_from_tensors(tensors, half.optim);
    EXPECT_EQ(optim.step, 2);

    const TrainResult resumed = train(tiny_config(4), tiny_data(), {}, model, optim);
    EXPECT_EQ(flat_weights(resumed.model), flat_weights(full.model));
    EXPECT_EQ(resumed.optim.step, 4);
    ASSERT_EQ(resumed.log.steps.size(), 2U);
    EXPECT_EQ(resumed.log.steps.back().total, full.log.steps.back().total);
}

TEST(Train, DivergenceAbortsAndKeepsTheLastCheckpoint) {
    const fs::path dir = fs::temp_directory_path() / "tmr_unit";
    fs::create_directories(dir);
    TrainConfig cfg = tiny_config(20);
    cfg.optim.lr = 1e6;
    cfg.checkpoint_path = dir / "diverged.tmrc";
    fs::remove(cfg.checkpoint_path);
    EXPECT_THROW(train(cfg, tiny_data()), NumericError);
    EXPECT_TRUE(fs::exists(cfg.checkpoint_path));
}

TEST(Train, LogsCarryLossComponents) {
    std::vector<nlohmann::json> lines;
    TrainHooks hooks;
    hooks.on_log = [&lines](const nlohmann::json& j) { lines.push_back(j); };
    train(tiny_config(2), tiny_data(), hooks);
    ASSERT_EQ(lines.size(), 2U);
    for (const char* key : {"step", "L_P", "L_B", "loss", "lr"}) EXPECT_TRUE(lines[0].contains(key)) << key;
}

TEST(Train, DrawsAreDeterministicPerStepAndSlot) {
    const auto q = tiny_data().queries();
    const Draw a = draw_sample(tiny_data(), q, 1, 5, 0);
    const Draw b = draw_sample(tiny_data(), q, 1, 5, 0);
    EXPECT_EQ(a.item, b.item);
    EXPECT_EQ(a.exemplar, b.exemplar);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
    TrainConfig cfg = tiny_config(12);
    cfg.model.match = MatchVariant::pm;
    cfg.schedule = LrSchedule::cosine;
    const TrainConfig back = train_config_from_json(to_json(cfg));
    EXPECT_EQ(back.steps, 12);
    EXPECT_EQ(back.model.match, MatchVariant::pm);
    EXPECT_EQ(back.schedule, LrSchedule::cosine);
    EXPECT_EQ(back.model.backbone.widths, cfg.model.backbone.widths);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"stpes", 3}}), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"optim", {{"lr", -1.0}}}}), ConfigError);
}

TEST(Train, RejectsAnInitModelWithADifferentShape) {
    TrainConfig cfg = tiny_config(1);
    ModelConfig other = cfg.model;
    other.backbone.projection_out = 16;
    Model<float> m(other);
    m.init(1);
    EXPECT_THROW(train(cfg, tiny_data(), {}, m), ConfigError);
}

TEST(Ablation, SingleVariantRunsAndReports) {
    TrainConfig cfg = tiny_config(1);
    const auto rows = run_ablation(cfg, {{"tm", MatchVariant::tm, DecodeVariant::full}}, tiny_data(), tiny_data(),
                                   InferConfig{});
    ASSERT_EQ(rows.size(), 1U);
    EXPECT_EQ(rows[0].report.overall.queries, 3);
    const auto j = to_json(rows);
    ASSERT_TRUE(j.is_array());
    EXPECT_EQ(j[0]["variant"], "tm");
}

TEST(Checkpoint, ModelTensorsRoundTrip) {
    TrainConfig cfg = tiny_config(0);
    cfg.model.decode = DecodeVariant::scale_only;
    Model<float> m(cfg.model);
    m.init(3);
    const Model<float> back = Model<float>::from_tensors(m.to_tensors());
    EXPECT_EQ(flat_weights(back), flat_weights(m));
    EXPECT_EQ(back.config().decode, DecodeVariant::scale_only);
    EXPECT_EQ(back.config().backbone.widths, cfg.model.backbone.widths);
    auto tensors = m.to_tensors();
    tensors.pop_back();
    EXPECT_THROW(Model<float>::from_tensors(tensors), FormatError);
}

}  // namespace
}  // namespace tmr
