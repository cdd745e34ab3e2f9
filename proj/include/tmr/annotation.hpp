#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmr/box.hpp"

namespace tmr {

enum class EdgelessMode { L, R, T, B, TL, TR, BL, BR };

std::string to_string(EdgelessMode m);
EdgelessMode parse_edgeless_mode(const std::string& s);

struct PatternAnnotation {
    int id = 0;
    std::vector<BoxXYWH> exemplars;
    std::vector<BoxXYWH> boxes;

    bool operator==(const PatternAnnotation&) const = default;
};

struct SampleAnnotation {
    std::string image;
    int width = 0;
    int height = 0;
    std::vector<PatternAnnotation> patterns;
    /// Set once an edgeless crop has been applied; a second crop is rejected.
    std::optional<EdgelessMode> edgeless;

    bool operator==(const SampleAnnotation&) const = default;
};

/// Predictions for one (image, pattern) query.
struct PredictionSet {
    std::string image;
    int pattern = 0;
    std::vector<BoxXYWH> boxes;
    std::vector<double> scores;
};

nlohmann::json to_json(const SampleAnnotation& s);
SampleAnnotation annotation_from_json(const nlohmann::json& j);

nlohmann::json to_json(const std::vector<PredictionSet>& preds);
std::vector<PredictionSet> predictions_from_json(const nlohmann::json& j);

nlohmann::json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Accepts a single annotation document, an array of them, or a directory holding
/// per-sample *.json documents (sorted by file name). Image paths stay as written.
std::vector<SampleAnnotation> load_annotations(const std::filesystem::path& path);

}  // namespace tmr
