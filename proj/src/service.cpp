#include "tmr/service.hpp"

#include <httplib.h>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "tmr/errors.hpp"

namespace tmr {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxRequestBytes = 2 * kMaxImageBytes;

BoxXYWH parse_box(const json& j) {
    if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); })) {
        throw RequestError(400, "exemplar must be [cx, cy, w, h]");
    }
    const BoxXYWH b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid()) throw RequestError(400, "exemplar must have finite coordinates and positive size");
    return b;
}

json error_json(const std::string& what) { return {{"error", what}}; }

}  // namespace

DetectRequest parse_detect_request(const json& body) {
    if (!body.is_object()) throw RequestError(400, "request body must be a JSON object");
    static const std::vector<std::string> known{"image", "image_base64", "exemplars", "tau",
                                                "aggregate", "scales", "variant", "timing"};
    for (const auto& [k, v] : body.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw RequestError(400, "unknown field \"" + k + "\"");
        }
    }
    DetectRequest req;
    try {
        if (body.contains("image")) req.image_id = body.at("image").get<std::string>();
        if (body.contains("image_base64")) {
            const auto& text = body.at("image_base64").get_ref<const std::string&>();
            if (text.size() / 4 * 3 > kMaxImageBytes + 3) throw RequestError(413, "image exceeds 16 MiB");
            req.image_bytes = base64_decode(text);
            if (req.image_bytes.size() > kMaxImageBytes) throw RequestError(413, "image exceeds 16 MiB");
        }
        if (!req.image_id && req.image_bytes.empty()) throw RequestError(400, "request needs \"image\" or \"image_base64\"");
        if (req.image_id && !req.image_bytes.empty()) {
            throw RequestError(400, "give either \"image\" or \"image_base64\", not both");
        }
        if (!body.contains("exemplars") || !body.at("exemplars").is_array()) {
            throw RequestError(400, "request needs an \"exemplars\" array");
        }
        for (const auto& e : body.at("exemplars")) req.exemplars.push_back(parse_box(e));
        if (req.exemplars.empty()) throw RequestError(400, "at least one exemplar is required");
        if (body.contains("tau")) {
            req.tau = body.at("tau").get<double>();
            if (!(*req.tau > 0.0 && *req.tau < 1.0)) throw RequestError(400, "tau must lie in (0, 1)");
        }
        if (body.contains("aggregate")) req.aggregate = body.at("aggregate").get<bool>();
        if (body.contains("scales")) {
            req.scales = body.at("scales").get<std::vector<int>>();
            for (int s : req.scales) {
                if (s < 1 || s > 1024) throw RequestError(400, "scales must lie in [1, 1024]");
            }
        }
        if (body.contains("variant")) req.variant = body.at("variant").get<std::string>();
        if (body.contains("timing")) req.timing = body.at("timing").get<bool>();
    } catch (const json::exception& e) {
        throw RequestError(400, std::string("malformed request: ") + e.what());
    } catch (const ArgumentError& e) {
        throw RequestError(400, e.what());
    }
    return req;
}

std::vector<Detection> detect_image(const Model<float>& model, const RgbImage& image,
                                    const std::vector<BoxXYWH>& exemplars, const InferConfig& cfg) {
    if (model.config().backbone.mode != FeatureSource::tiny_backbone) {
        throw ArgumentError("model expects precomputed feature maps, not images");
    }
    const FeatureMap input = image_to_input(pad_to_multiple(image, kTinyBackboneDownsample));
    std::vector<Detection> dets = detect(input, exemplars, model, cfg);
    for (auto& d : dets) d.box = clamp_to_image(d.box, image.width, image.height);
    return dets;
}

json detections_json(const std::vector<Detection>& dets) {
    json out = json::array();
    for (const auto& d : dets) {
        out.push_back({{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                       {"score", d.score},
                       {"exemplar_id", d.exemplar_id},
                       {"scale_id", d.scale_id}});
    }
    return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    using namespace boost::archive::iterators;
    using Encoder = base64_from_binary<transform_width<const std::uint8_t*, 6, 8>>;
    std::string out(Encoder(bytes.data()), Encoder(bytes.data() + bytes.size()));
    out.append((4 - out.size() % 4) % 4, '=');
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    using namespace boost::archive::iterators;
    using Decoder = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
    }
    if (clean.size() % 4 != 0) throw ArgumentError("base64 length must be a multiple of 4");
    std::size_t pad = 0;
    while (pad < 2 && pad < clean.size() && clean[clean.size() - 1 - pad] == '=') ++pad;
    std::fill(clean.end() - static_cast<std::ptrdiff_t>(pad), clean.end(), 'A');
    std::vector<std::uint8_t> out;
    try {
        out.assign(Decoder(clean.begin()), Decoder(clean.end()));
    } catch (const std::exception&) {
        throw ArgumentError("invalid base64 data");
    }
    out.resize(clean.size() / 4 * 3 - pad);
    return out;
}

std::string content_id(const std::vector<std::uint8_t>& bytes) {
    // FNV-1a, 64 bit.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DetectionService::DetectionService(std::vector<NamedModel> models, InferConfig defaults)
    : models_(std::move(models)), defaults_(std::move(defaults)) {
    if (models_.empty()) throw ConfigError("the service needs at least one model");
    defaults_.validate();
}

const NamedModel& DetectionService::select(const std::optional<std::string>& variant) const {
    if (!variant) return models_.front();
    for (const auto& m : models_) {
        if (m.name == *variant || to_string(m.model.config().match) == *variant) return m;
    }
    throw RequestError(400, "variant \"" + *variant + "\" is not loaded");
}

json DetectionService::detect(const json& body) const {
    const auto t0 = std::chrono::steady_clock::now();
    const DetectRequest req = parse_detect_request(body);
    const NamedModel& nm = select(req.variant);

    std::vector<std::uint8_t> stored;
    if (req.image_id) {
        auto img = image(*req.image_id);
        if (!img) throw RequestError(404, "no image with id " + *req.image_id);
        stored = std::move(*img);
    }
    RgbImage image;
    try {
        image = decode_png(req.image_id ? stored : req.image_bytes);
    } catch (const FormatError& e) {
        throw RequestError(400, e.what());
    }

    InferConfig cfg = defaults_;
    if (req.tau) cfg.tau = *req.tau;
    if (!req.scales.empty()) cfg.scales = req.scales;
    std::vector<BoxXYWH> exemplars = req.exemplars;
    if (!req.aggregate) exemplars.resize(1);

    std::vector<Detection> dets;
    try {
        dets = detect_image(nm.model, image, exemplars, cfg);
    } catch (const ArgumentError& e) {
        throw RequestError(400, e.what());
    } catch (const ConfigError& e) {
        throw RequestError(400, e.what());
    }
    json out{{"model", nm.name},
             {"variant", {{"match", to_string(nm.model.config().match)}, {"decode", to_string(nm.model.config().decode)}}},
             {"width", image.width},
             {"height", image.height},
             {"tau", cfg.tau},
             {"detections", detections_json(dets)}};
    if (req.timing) {
        out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return out;
}

json DetectionService::model_info() const {
    json models = json::array();
    for (const auto& m : models_) {
        models.push_back({{"name", m.name},
                          {"variant", {{"match", to_string(m.model.config().match)},
                                       {"decode", to_string(m.model.config().decode)}}},
                          {"parameters", m.model.parameter_count()}});
    }
    json out = models.front();
    out["models"] = models;
    return out;
}

std::string DetectionService::store_image(const std::vector<std::uint8_t>& png) {
    if (png.size() > kMaxImageBytes) throw RequestError(413, "image exceeds 16 MiB");
    try {
        (void)decode_png(png);
    } catch (const FormatError& e) {
        throw RequestError(400, e.what());
    }
    std::string id = content_id(png);
    const std::lock_guard lock(images_mutex_);
    images_.emplace(id, png);
    return id;
}

std::optional<std::vector<std::uint8_t>> DetectionService::image(const std::string& id) const {
    const std::lock_guard lock(images_mutex_);
    const auto it = images_.find(id);
    if (it == images_.end()) return std::nullopt;
    return it->second;
}

std::unique_ptr<httplib::Server> make_http_server(DetectionService& service) {
    auto server = std::make_unique<httplib::Server>();
    server->set_payload_max_length(kMaxRequestBytes);

    const auto fail = [](httplib::Response& res, int status, const std::string& what) {
        res.status = status;
        res.set_content(error_json(what).dump(), "application/json");
    };

    server->Post("/detect", [&service, fail](const httplib::Request& req, httplib::Response& res) {
        try {
            const json body = json::parse(req.body);
            res.set_content(service.detect(body).dump(), "application/json");
        } catch (const json::parse_error& e) {
            fail(res, 400, std::string("request body is not JSON: ") + e.what());
        } catch (const RequestError& e) {
            fail(res, e.status(), e.what());
        } catch (const std::exception& e) {
            spdlog::error("/detect: {}", e.what());
            fail(res, 500, e.what());
        }
    });
    server->Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
    server->Get("/model", [&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(service.model_info().dump(), "application/json");
    });
    server->Post("/images", [&service, fail](const httplib::Request& req, httplib::Response& res) {
        try {
            const std::vector<std::uint8_t> bytes(req.body.begin(), req.body.end());
            const std::string id = service.store_image(bytes);
            const RgbImage img = decode_png(bytes);
            res.set_content(json{{"id", id}, {"width", img.width}, {"height", img.height}}.dump(), "application/json");
        } catch (const RequestError& e) {
            fail(res, e.status(), e.what());
        }
    });
    server->Get(R"(/images/([0-9a-f]+))", [&service, fail](const httplib::Request& req, httplib::Response& res) {
        const auto bytes = service.image(req.matches[1]);
        if (!bytes) {
            fail(res, 404, "no image with id " + std::string(req.matches[1]));
            return;
        }
        res.set_content(std::string(bytes->begin(), bytes->end()), "image/png");
    });
    return server;
}

void serve(DetectionService& service, const std::string& host, int port) {
    auto server = make_http_server(service);
    spdlog::info("listening on {}:{}", host, port);
    if (!server->listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace tmr
