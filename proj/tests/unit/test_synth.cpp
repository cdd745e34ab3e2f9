#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "tmr/annotation.hpp"
#include "tmr/errors.hpp"
#include "tmr/image.hpp"
#include "tmr/synth.hpp"

namespace tmr {
namespace {

namespace fs = std::filesystem;

GenSpec clean_spec(std::uint64_t seed) {
    GenSpec s;
    s.seed = seed;
    s.jitter = 0.0;
    s.scale_variation = 0.0;
    s.color_variation = 0.0;
    s.distractor_density = 0.0;
    return s;
}

TEST(Generate, SameSeedSameSample) {
    for (const char* name : {"lattice-easy", "bigram"}) {
        const auto a = generate(preset(name, 17));
        const auto b = generate(preset(name, 17));
        EXPECT_EQ(a.image.pixels, b.image.pixels) << name;
        EXPECT_EQ(a.annotation, b.annotation) << name;
        const auto c = generate(preset(name, 18));
        EXPECT_NE(a.image.pixels, c.image.pixels) << name;
    }
}

TEST(Generate, FixedLatticeYieldsRowsTimesColsInstances) {
    GenSpec s = clean_spec(3);
    s.rows = 3;
    s.cols = 4;
    s.size_min = 24;
    s.size_max = 30;
    const auto g = generate(s);
    ASSERT_EQ(g.annotation.patterns.size(), 1U);
    EXPECT_EQ(g.annotation.patterns[0].boxes.size(), 12U);
    EXPECT_EQ(g.annotation.patterns[0].exemplars.size(), 3U);
    // Without jitter, centers sit on a regular grid: 3 distinct rows of 4 boxes each.
    std::vector<double> ys;
    for (const auto& b : g.annotation.patterns[0].boxes) {
        if (std::none_of(ys.begin(), ys.end(), [&](double y) { return std::abs(y - b.cy) < 2.0; })) ys.push_back(b.cy);
    }
    EXPECT_EQ(ys.size(), 3U);
}

TEST(Generate, EveryBoxRespectsTheMinimumSize) {
    const double min_side = minimum_box_side(256, 256);
    EXPECT_NEAR(min_side, 7.68, 1e-12);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto g = generate(preset(seed % 2 ? "bigram" : "lattice-easy", seed));
        int total = 0;
        for (const auto& p : g.annotation.patterns) {
            for (const auto& b : p.boxes) {
                EXPECT_GE(b.w, min_side);
                EXPECT_GE(b.h, min_side);
                EXPECT_GE(b.left(), 0.0);
                EXPECT_LE(b.right(), 256.0);
                ++total;
            }
            for (const auto& e : p.exemplars) {
                EXPECT_NE(std::find(p.boxes.begin(), p.boxes.end(), e), p.boxes.end());
            }
        }
        EXPECT_GT(total, 0);
    }
}

TEST(Generate, LatticeEasyStaysWithinTwentyInstances) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto g = generate(preset("lattice-easy", seed));
        ASSERT_EQ(g.annotation.patterns.size(), 1U);
        EXPECT_LE(g.annotation.patterns[0].boxes.size(), 20U);
    }
}

TEST(Generate, MirroredPairIsTheReflectionOfTheFirstPattern) {
    GenSpec s = clean_spec(5);
    s.motifs = {Motif::bigram};
    s.patterns = 2;
    s.mirrored_pair = true;
    s.rows = 2;
    s.cols = 2;
    const auto g = generate(s);
    ASSERT_EQ(g.annotation.patterns.size(), 2U);
    const BoxXYWH a = g.annotation.patterns[0].boxes[0];
    const BoxXYWH b = g.annotation.patterns[1].boxes[0];
    EXPECT_NEAR(a.w, b.w, 1.0);
    EXPECT_NEAR(a.h, b.h, 1.0);
    // Compare instance b against a mirrored and unmirrored.
    const int w = static_cast<int>(std::min(a.w, b.w));
    const int h = static_cast<int>(std::min(a.h, b.h));
    double mirrored = 0.0, straight = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto* pa = g.image.at(static_cast<int>(a.left()) + x, static_cast<int>(a.top()) + y);
            const auto* pm = g.image.at(static_cast<int>(a.left()) + w - 1 - x, static_cast<int>(a.top()) + y);
            const auto* pb = g.image.at(static_cast<int>(b.left()) + x, static_cast<int>(b.top()) + y);
            for (int c = 0; c < 3; ++c) {
                mirrored += std::abs(int(pm[c]) - int(pb[c]));
                straight += std::abs(int(pa[c]) - int(pb[c]));
            }
        }
    }
    EXPECT_LT(mirrored, 0.25 * straight);
}

TEST(Generate, InfeasiblePackingThrows) {
    GenSpec s = clean_spec(1);
    s.rows = 10;
    s.cols = 10;
    s.max_instances = 100;
    s.size_min = 40;
    s.size_max = 50;
    EXPECT_THROW(generate(s), GenerationError);
    s.rows = 0;
    s.cols = 0;
    s.size_min = 200;
    s.size_max = 220;
    EXPECT_THROW(generate(s), GenerationError);
}

TEST(Generate, InvalidSpecsAreConfigErrors) {
    GenSpec s;
    s.patterns = 4;
    EXPECT_THROW(generate(s), ConfigError);
    EXPECT_THROW(preset("nope", 0), ArgumentError);
}

TEST(Edgeless, CropsMatchTheirDefinitions) {
    const BoxXYWH b{40, 20, 16, 8};
    EXPECT_EQ(edgeless_crop(b, EdgelessMode::L), (BoxXYWH{36, 20, 8, 8}));
    EXPECT_EQ(edgeless_crop(b, EdgelessMode::R), (BoxXYWH{44, 20, 8, 8}));
    EXPECT_EQ(edgeless_crop(b, EdgelessMode::T), (BoxXYWH{40, 18, 16, 4}));
    EXPECT_EQ(edgeless_crop(b, EdgelessMode::BR), (BoxXYWH{44, 22, 8, 4}));
    for (EdgelessMode m : {EdgelessMode::L, EdgelessMode::R, EdgelessMode::T, EdgelessMode::B, EdgelessMode::TL,
                           EdgelessMode::TR, EdgelessMode::BL, EdgelessMode::BR}) {
        const BoxXYWH c = edgeless_crop(b, m);
        EXPECT_GE(c.left(), b.left());
        EXPECT_LE(c.right(), b.right());
        EXPECT_GE(c.top(), b.top());
        EXPECT_LE(c.bottom(), b.bottom());
        const double ratio = c.area() / b.area();
        EXPECT_TRUE(ratio == 0.5 || ratio == 0.25) << to_string(m);
        EXPECT_EQ(parse_edgeless_mode(to_string(m)), m);
    }
}

TEST(Edgeless, TransformAppliesOnce) {
    const auto g = generate(preset("lattice-easy", 2));
    const auto t = edgeless_transform(g.annotation, EdgelessMode::TL);
    ASSERT_TRUE(t.edgeless.has_value());
    EXPECT_EQ(t.patterns[0].boxes[0], edgeless_crop(g.annotation.patterns[0].boxes[0], EdgelessMode::TL));
    EXPECT_THROW(edgeless_transform(t, EdgelessMode::L), ArgumentError);
}

TEST(Annotation, JsonRoundTrip) {
    auto g = generate(preset("bigram", 9));
    g.annotation.image = "x.png";
    g.annotation.edgeless = EdgelessMode::B;
    EXPECT_EQ(annotation_from_json(to_json(g.annotation)), g.annotation);
    EXPECT_THROW(annotation_from_json(nlohmann::json{{"image", "a"}}), FormatError);
}

TEST(Annotation, PngRoundTripAndDatasetFiles) {
    const auto g = generate(preset("lattice-easy", 4));
    const auto bytes = encode_png(g.image);
    const RgbImage back = decode_png(bytes);
    EXPECT_EQ(back.width, g.image.width);
    EXPECT_EQ(back.pixels, g.image.pixels);
    EXPECT_THROW(decode_png({1, 2, 3}), FormatError);

    const fs::path dir = fs::temp_directory_path() / "tmr_unit" / "dataset";
    fs::remove_all(dir);
    generate_dataset(dir, "lattice-easy", 100, 3);
    const auto anns = load_annotations(dir);
    ASSERT_EQ(anns.size(), 3U);
    EXPECT_EQ(anns[0].image, "00000.png");
    EXPECT_TRUE(fs::exists(dir / "00002.png"));
    EXPECT_EQ(anns[1].patterns, generate(preset("lattice-easy", 101)).annotation.patterns);
}

}  // namespace
}  // namespace tmr
