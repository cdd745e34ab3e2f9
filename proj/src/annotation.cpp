#include "tmr/annotation.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "tmr/errors.hpp"

namespace tmr {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 8> kEdgelessNames{"L", "R", "T", "B", "TL", "TR", "BL", "BR"};

json box_json(const BoxXYWH& b) { return json::array({b.cx, b.cy, b.w, b.h}); }

BoxXYWH box_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 4) {
        throw FormatError(std::string(what) + ": box must be [cx, cy, w, h]");
    }
    for (const auto& v : j) {
        if (!v.is_number()) throw FormatError(std::string(what) + ": box values must be numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::vector<BoxXYWH> boxes_from(const json& j, const char* what) {
    if (!j.is_array()) throw FormatError(std::string(what) + " must be an array");
    std::vector<BoxXYWH> out;
    out.reserve(j.size());
    for (const auto& b : j) out.push_back(box_from(b, what));
    return out;
}

template <typename V>
V required(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field \"") + key + "\"");
    try {
        return j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("field \"") + key + "\": " + e.what());
    }
}

}  // namespace

std::string to_string(EdgelessMode m) { return kEdgelessNames[static_cast<std::size_t>(m)]; }

EdgelessMode parse_edgeless_mode(const std::string& s) {
    for (std::size_t i = 0; i < kEdgelessNames.size(); ++i) {
        if (s == kEdgelessNames[i]) return static_cast<EdgelessMode>(i);
    }
    throw ArgumentError("unknown edgeless mode \"" + s + "\" (expected L, R, T, B, TL, TR, BL or BR)");
}

json to_json(const SampleAnnotation& s) {
    json patterns = json::array();
    for (const auto& p : s.patterns) {
        json ex = json::array();
        for (const auto& b : p.exemplars) ex.push_back(box_json(b));
        json bx = json::array();
        for (const auto& b : p.boxes) bx.push_back(box_json(b));
        patterns.push_back({{"id", p.id}, {"exemplars", ex}, {"boxes", bx}});
    }
    json j{{"image", s.image}, {"width", s.width}, {"height", s.height}, {"patterns", patterns}};
    if (s.edgeless) j["edgeless"] = to_string(*s.edgeless);
    return j;
}

SampleAnnotation annotation_from_json(const json& j) {
    SampleAnnotation s;
    s.image = required<std::string>(j, "image");
    s.width = required<int>(j, "width");
    s.height = required<int>(j, "height");
    if (s.width <= 0 || s.height <= 0) throw FormatError("annotation " + s.image + ": non-positive image size");
    const json& pats = j.at("patterns");
    if (!pats.is_array()) throw FormatError("annotation " + s.image + ": \"patterns\" must be an array");
    for (const auto& pj : pats) {
        PatternAnnotation p;
        p.id = required<int>(pj, "id");
        p.exemplars = boxes_from(pj.at("exemplars"), "exemplars");
        p.boxes = boxes_from(pj.at("boxes"), "boxes");
        s.patterns.push_back(std::move(p));
    }
    if (j.contains("edgeless")) {
        try {
            s.edgeless = parse_edgeless_mode(j.at("edgeless").get<std::string>());
        } catch (const ArgumentError& e) {
            throw FormatError(e.what());
        }
    }
    return s;
}

json to_json(const std::vector<PredictionSet>& preds) {
    json out = json::array();
    for (const auto& p : preds) {
        json boxes = json::array();
        for (std::size_t i = 0; i < p.boxes.size(); ++i) {
            const BoxXYWH& b = p.boxes[i];
            boxes.push_back({b.cx, b.cy, b.w, b.h, p.scores[i]});
        }
        out.push_back({{"image", p.image}, {"pattern", p.pattern}, {"boxes", boxes}});
    }
    return out;
}

std::vector<PredictionSet> predictions_from_json(const json& j) {
    if (!j.is_array()) throw FormatError("prediction dump must be an array");
    std::vector<PredictionSet> out;
    for (const auto& pj : j) {
        PredictionSet p;
        p.image = required<std::string>(pj, "image");
        p.pattern = required<int>(pj, "pattern");
        const json& boxes = pj.at("boxes");
        if (!boxes.is_array()) throw FormatError("prediction " + p.image + ": \"boxes\" must be an array");
        for (const auto& b : boxes) {
            if (!b.is_array() || b.size() != 5) {
                throw FormatError("prediction " + p.image + ": box must be [cx, cy, w, h, score]");
            }
            p.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            p.scores.push_back(b[4].get<double>());
        }
        out.push_back(std::move(p));
    }
    return out;
}

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

std::vector<SampleAnnotation> load_annotations(const std::filesystem::path& path) {
    std::vector<SampleAnnotation> out;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back(annotation_from_json(load_json(f)));
        return out;
    }
    const json j = load_json(path);
    if (j.is_array()) {
        for (const auto& doc : j) out.push_back(annotation_from_json(doc));
    } else {
        out.push_back(annotation_from_json(j));
    }
    return out;
}

}  // namespace tmr
