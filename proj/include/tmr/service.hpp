#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmr/image.hpp"
#include "tmr/infer.hpp"
#include "tmr/model.hpp"

namespace httplib {
class Server;
}

namespace tmr {

inline constexpr std::size_t kMaxImageBytes = 16U << 20;

/// A request the service refuses; carries the HTTP status to answer with.
class RequestError : public std::runtime_error {
public:
    RequestError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    [[nodiscard]] int status() const { return status_; }

private:
    int status_;
};

struct DetectRequest {
    std::optional<std::string> image_id;
    std::vector<std::uint8_t> image_bytes;  ///< inline PNG (decoded from base64)
    std::vector<BoxXYWH> exemplars;
    std::optional<double> tau;
    /// Aggregate all exemplars (few-shot); false uses the first exemplar only.
    bool aggregate = true;
    std::vector<int> scales;
    std::optional<std::string> variant;
    bool timing = false;
};

/// Parses and validates a /detect body. Throws RequestError(400) when malformed and
/// RequestError(413) when the inline image exceeds the upload cap.
DetectRequest parse_detect_request(const nlohmann::json& body);

/// The detection path shared by the CLI and the service: pads the image for the backbone,
/// runs few-shot / multi-scale detection and clamps boxes to the image.
std::vector<Detection> detect_image(const Model<float>& model, const RgbImage& image,
                                    const std::vector<BoxXYWH>& exemplars, const InferConfig& cfg);

nlohmann::json detections_json(const std::vector<Detection>& dets);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Stable content hash used as an image id.
std::string content_id(const std::vector<std::uint8_t>& bytes);

struct NamedModel {
    std::string name;
    Model<float> model;
};

/// Request handling independent of the transport. Models are immutable after construction;
/// the only mutable state is the content-addressed image store.
class DetectionService {
public:
    /// Models are addressable by name and by their matching variant; the first is the default.
    DetectionService(std::vector<NamedModel> models, InferConfig defaults);

    nlohmann::json detect(const nlohmann::json& body) const;
    nlohmann::json model_info() const;

    std::string store_image(const std::vector<std::uint8_t>& png);
    std::optional<std::vector<std::uint8_t>> image(const std::string& id) const;

private:
    const NamedModel& select(const std::optional<std::string>& variant) const;

    std::vector<NamedModel> models_;
    InferConfig defaults_;
    mutable std::mutex images_mutex_;
    std::map<std::string, std::vector<std::uint8_t>> images_;
};

/// Routes: POST /detect, GET /healthz, GET /model, POST /images, GET /images/{id}.
std::unique_ptr<httplib::Server> make_http_server(DetectionService& service);

/// Blocks until the server stops.
void serve(DetectionService& service, const std::string& host, int port);

}  // namespace tmr
