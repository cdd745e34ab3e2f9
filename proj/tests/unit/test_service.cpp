#include <gtest/gtest.h>

#include <httplib.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "tmr/errors.hpp"
#include "tmr/service.hpp"
#include "tmr/synth.hpp"

namespace tmr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Model<float> service_model(MatchVariant match = MatchVariant::tm) {
    ModelConfig cfg;
    cfg.backbone.widths = {4, 8, 8};
    cfg.backbone.projection_out = 8;
    cfg.backbone.upsample_to = 0;
    cfg.match = match;
    cfg.presence_prior = 0.3;
    Model<float> m(cfg);
    m.init(11);
    return m;
}

struct Fixture {
    GeneratedSample sample = generate(preset("lattice-easy", 77));
    std::vector<std::uint8_t> png = encode_png(sample.image);
    BoxXYWH exemplar = sample.annotation.patterns[0].exemplars[0];
};

json detect_body(const Fixture& f) {
    return {{"image_base64", base64_encode(f.png)},
            {"exemplars", {{f.exemplar.cx, f.exemplar.cy, f.exemplar.w, f.exemplar.h}}},
            {"tau", 0.2}};
}

DetectionService make_service() {
    std::vector<NamedModel> models;
    models.push_back({"tm", service_model(MatchVariant::tm)});
    models.push_back({"pm", service_model(MatchVariant::pm)});
    return DetectionService(std::move(models), InferConfig{});
}

// Binds an ephemeral port and serves on a background thread until destroyed.
class RunningServer {
public:
    explicit RunningServer(DetectionService& service) : server_(make_http_server(service)) {
        port_ = server_->bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }
    ~RunningServer() {
        server_->stop();
        thread_.join();
    }
    [[nodiscard]] int port() const { return port_; }

private:
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

TEST(Base64, RoundTripsEveryLengthModuloThree) {
    for (std::size_t n : {0U, 1U, 2U, 3U, 4U, 5U, 257U}) {
        std::vector<std::uint8_t> bytes(n);
        for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 5);
        const std::string text = base64_encode(bytes);
        EXPECT_EQ(text.size() % 4, 0U);
        EXPECT_EQ(base64_decode(text), bytes) << n;
    }
    EXPECT_EQ(base64_encode({'M', 'a'}), "TWE=");
    EXPECT_THROW(base64_decode("abc"), ArgumentError);
}

TEST(DetectRequest, ValidationMapsToStatusCodes) {
    const Fixture f;
    const json ok = detect_body(f);
    EXPECT_NO_THROW(parse_detect_request(ok));
    const auto status = [](const json& body) {
        try {
            parse_detect_request(body);
        } catch (const RequestError& e) {
            return e.status();
        }
        return 200;
    };
    json unknown = ok;
    unknown["colour"] = "red";
    EXPECT_EQ(status(unknown), 400);
    json none = ok;
    none["exemplars"] = json::array();
    EXPECT_EQ(status(none), 400);
    json tau = ok;
    tau["tau"] = 1.0;
    EXPECT_EQ(status(tau), 400);
    json box = ok;
    box["exemplars"] = {{1, 2, 3}};
    EXPECT_EQ(status(box), 400);
    json big = ok;
    big["image_base64"] = std::string((kMaxImageBytes / 3 + 2) * 4, 'A');
    EXPECT_EQ(status(big), 413);
}

TEST(Service, HttpEndpoints) {
    DetectionService service = make_service();
    RunningServer server(service);
    httplib::Client cli("127.0.0.1", server.port());
    const Fixture f;

    auto health = cli.Get("/healthz");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(health->body, "ok");

    auto model = cli.Get("/model");
    ASSERT_TRUE(model);
    const json info = json::parse(model->body);
    EXPECT_EQ(info["name"], "tm");
    EXPECT_EQ(info["models"].size(), 2U);

    auto up = cli.Post("/images", std::string(f.png.begin(), f.png.end()), "image/png");
    ASSERT_TRUE(up);
    ASSERT_EQ(up->status, 200);
    const json stored = json::parse(up->body);
    EXPECT_EQ(stored["width"], 256);
    const std::string id = stored["id"];

    auto img = cli.Get("/images/" + id);
    ASSERT_TRUE(img);
    EXPECT_EQ(img->status, 200);
    EXPECT_EQ(img->body.size(), f.png.size());
    EXPECT_EQ(cli.Get("/images/00000000deadbeef")->status, 404);

    json by_id = detect_body(f);
    by_id.erase("image_base64");
    by_id["image"] = id;
    auto a = cli.Post("/detect", by_id.dump(), "application/json");
    auto b = cli.Post("/detect", detect_body(f).dump(), "application/json");
    ASSERT_TRUE(a && b);
    ASSERT_EQ(a->status, 200) << a->body;
    EXPECT_EQ(a->body, b->body);
    const json out = json::parse(a->body);
    EXPECT_EQ(out["variant"]["match"], "tm");
    EXPECT_FALSE(out.contains("timing_ms"));

    json pm = detect_body(f);
    pm["variant"] = "pm";
    EXPECT_EQ(json::parse(cli.Post("/detect", pm.dump(), "application/json")->body)["model"], "pm");

    json timed = detect_body(f);
    timed["timing"] = true;
    EXPECT_TRUE(json::parse(cli.Post("/detect", timed.dump(), "application/json")->body).contains("timing_ms"));

    EXPECT_EQ(cli.Post("/detect", "{not json", "application/json")->status, 400);
    json missing = by_id;
    missing["image"] = "0123456789abcdef";
    EXPECT_EQ(cli.Post("/detect", missing.dump(), "application/json")->status, 404);
    json bad_variant = detect_body(f);
    bad_variant["variant"] = "cosmic";
    EXPECT_EQ(cli.Post("/detect", bad_variant.dump(), "application/json")->status, 400);
    EXPECT_EQ(cli.Post("/images", "not a png", "image/png")->status, 400);
}

TEST(Service, ConcurrentIdenticalRequestsGetIdenticalBodies) {
    DetectionService service = make_service();
    RunningServer server(service);
    const Fixture f;
    const std::string body = detect_body(f).dump();
    std::array<std::string, 16> replies;
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < replies.size(); ++i) {
        threads.emplace_back([&, i] {
            httplib::Client cli("127.0.0.1", server.port());
            cli.set_read_timeout(120, 0);
            auto r = cli.Post("/detect", body, "application/json");
            replies[i] = r ? r->body : "no response";
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& r : replies) EXPECT_EQ(r, replies[0]);
    EXPECT_TRUE(json::parse(replies[0]).contains("detections"));
}

std::string run_command(const std::string& cmd, int& exit_code) {
    std::string out;
    FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
    if (pipe == nullptr) throw IoError("popen failed");
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
    exit_code = WEXITSTATUS(pclose(pipe));
    return out;
}

TEST(Cli, DetectMatchesTheService) {
    const fs::path dir = fs::temp_directory_path() / "tmr_unit" / "cli";
    fs::create_directories(dir);
    const Fixture f;
    const Model<float> model = service_model();
    save_checkpoint(dir / "model.tmrc", model.to_tensors());
    write_file(dir / "image.png", f.png);

    int code = -1;
    const std::string ex = std::to_string(f.exemplar.cx) + "," + std::to_string(f.exemplar.cy) + "," +
                           std::to_string(f.exemplar.w) + "," + std::to_string(f.exemplar.h);
    const std::string out = run_command(std::string(TMR_CLI_PATH) + " detect --model " + (dir / "model.tmrc").string() +
                                            " --image " + (dir / "image.png").string() + " --tau 0.2 --exemplar " + ex,
                                        code);
    ASSERT_EQ(code, 0) << out;

    std::vector<NamedModel> models;
    models.push_back({"tm", model});
    const DetectionService service(std::move(models), InferConfig{});
    json body = detect_body(f);
    body["exemplars"] = {{std::stod(std::to_string(f.exemplar.cx)), std::stod(std::to_string(f.exemplar.cy)),
                          std::stod(std::to_string(f.exemplar.w)), std::stod(std::to_string(f.exemplar.h))}};
    EXPECT_EQ(json::parse(out)["detections"], service.detect(body)["detections"]);
}

TEST(Cli, GenerateIsDeterministicAndErrorsExitNonZero) {
    const fs::path a = fs::temp_directory_path() / "tmr_unit" / "gen_a";
    const fs::path b = fs::temp_directory_path() / "tmr_unit" / "gen_b";
    fs::remove_all(a);
    fs::remove_all(b);
    int code = -1;
    const std::string cli = TMR_CLI_PATH;
    run_command(cli + " generate --preset bigram --seed 3 --n 2 --out " + a.string(), code);
    ASSERT_EQ(code, 0);
    run_command(cli + " generate --preset bigram --seed 3 --n 2 --out " + b.string(), code);
    ASSERT_EQ(code, 0);
    for (const char* name : {"00000.png", "00001.json"}) EXPECT_EQ(read_file(a / name), read_file(b / name)) << name;

    run_command(cli + " generate --preset nope --out " + a.string(), code);
    EXPECT_EQ(code, 1);
    run_command(cli + " frobnicate", code);
    EXPECT_EQ(code, 1);
    run_command(cli + " detect --model /nonexistent.tmrc --image x.png --exemplar 1,2,3,4", code);
    EXPECT_EQ(code, 1);
}

}  // namespace
}  // namespace tmr
