#include <gtest/gtest.h>

#include <random>

#include "../oracles.hpp"
#include "test_support.hpp"
#include "tmr/errors.hpp"
#include "tmr/gradcheck.hpp"
#include "tmr/matching.hpp"

namespace tmr {
namespace {

using testing::dot;
using testing::random_grid;

TEST(TemplateMatch, AgreesWithTripleLoopIncludingEvenTemplates) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> side(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const Grid3d f = random_grid(9, 11, 3, rng);
        const Grid3d t = random_grid(side(rng), side(rng), 3, rng);
        const double scale = 0.5 + trial * 0.01;
        const Grid3d got = template_match(f, t, scale);
        const Grid3d want = oracle::template_match(f, t, scale);
        ASSERT_TRUE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got.values[i], want.values[i], 1e-12);
    }
}

TEST(TemplateMatch, InteriorIsShiftEquivariant) {
    std::mt19937_64 rng(12);
    const int H = 14, W = 14;
    const Grid3d t = random_grid(4, 3, 2, rng);
    const Grid3d f = random_grid(H, W, 2, rng);
    for (auto [sy, sx] : {std::pair{1, 2}, std::pair{3, 0}, std::pair{2, 3}}) {
        Grid3d g(H, W, 2);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                for (int d = 0; d < 2; ++d) g.at(y, x, d) = f.at((y - sy + H) % H, (x - sx + W) % W, d);
            }
        }
        const Grid3d a = template_match(f, t);
        const Grid3d b = template_match(g, t);
        // Cells whose footprint stays inside both maps without wrapping.
        for (int y = 2 + sy; y < H - 2; ++y) {
            for (int x = 1 + sx; x < W - 2; ++x) {
                if (y - sy < 2 || x - sx < 1) continue;
                for (int d = 0; d < 2; ++d) ASSERT_EQ(b.at(y, x, d), a.at(y - sy, x - sx, d));
            }
        }
    }
}

TEST(TemplateMatch, OneByOneTemplateIsChannelScaling) {
    std::mt19937_64 rng(13);
    const Grid3d f = random_grid(4, 4, 3, rng);
    Grid3d t(1, 1, 3);
    t.values = {2.0, -1.0, 0.5};
    const Grid3d out = template_match(f, t, 1.5);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            for (int d = 0; d < 3; ++d) EXPECT_NEAR(out.at(y, x, d), 1.5 * t.values[d] * f.at(y, x, d), 1e-12);
        }
    }
}

TEST(TemplateMatch, DepthMismatchThrows) {
    EXPECT_THROW(template_match(Grid3d(4, 4, 2), Grid3d(2, 2, 3)), ConfigError);
}

TEST(PrototypeMatch, UsesTheTemplateMean) {
    std::mt19937_64 rng(14);
    const Grid3d f = random_grid(5, 5, 2, rng);
    const Grid3d t = random_grid(3, 2, 2, rng);
    const Grid3d out = prototype_match(f, t, 2.0);
    for (int d = 0; d < 2; ++d) {
        double mean = 0.0;
        for (int y = 0; y < 3; ++y) {
            for (int x = 0; x < 2; ++x) mean += t.at(y, x, d);
        }
        mean /= 6.0;
        EXPECT_NEAR(out.at(2, 3, d), 2.0 * mean * f.at(2, 3, d), 1e-12);
    }
}

TEST(CosineMatch, IsOneWhereTheTemplateWasCut) {
    std::mt19937_64 rng(15);
    const Grid3d f = random_grid(7, 7, 3, rng);
    Grid3d t(3, 3, 3);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
            for (int d = 0; d < 3; ++d) t.at(y, x, d) = 4.0 * f.at(2 + y, 1 + x, d);
        }
    }
    const Grid3d out = cosine_match(f, t);
    ASSERT_EQ(out.depth, 1);
    EXPECT_NEAR(out.at(3, 2, 0), 1.0, 1e-12);
    for (double v : out.values) {
        EXPECT_LE(v, 1.0 + 1e-12);
        EXPECT_GE(v, -1.0 - 1e-12);
    }
    EXPECT_EQ(cosine_match(Grid3d(3, 3, 3), t).values, std::vector<double>(9, 0.0));
}

class MatchBackward : public ::testing::TestWithParam<MatchVariant> {};

TEST_P(MatchBackward, MatchesFiniteDifferences) {
    const MatchVariant v = GetParam();
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(200 + seed));
        Grid3d f = random_grid(6, 5, 3, rng);
        Grid3d t = random_grid(2 + seed % 2, 3 - seed % 2, 3, rng);
        std::vector<double> scale{0.8};
        const Grid3d probe = compute_match(v, f, t, scale[0]);
        const Grid3d w = random_grid(probe.height, probe.width, probe.depth, rng);
        const auto g = compute_match_backward(v, f, t, scale[0], w);
        std::vector<double> gs{g.scale};
        std::vector<GradTarget> targets;
        append_target(targets, "features", f, g.features);
        append_target(targets, "template", t, g.templ);
        targets.push_back({"scale", scale, gs});
        const auto report = grad_check([&] { return dot(compute_match(v, f, t, scale[0]), w); }, targets);
        EXPECT_LT(report.max_rel_error, 1e-6) << to_string(v) << " " << report.worst_target;
    }
}

INSTANTIATE_TEST_SUITE_P(Variants, MatchBackward,
                         ::testing::Values(MatchVariant::tm, MatchVariant::tm_only, MatchVariant::pm,
                                           MatchVariant::tm_cos));

TEST(HeadInput, LayoutAndDepthPerVariant) {
    std::mt19937_64 rng(16);
    const Grid3d f = random_grid(3, 3, 4, rng);
    const Grid3d t = random_grid(2, 2, 4, rng);
    for (MatchVariant v : {MatchVariant::none, MatchVariant::tm_only, MatchVariant::tm_cos, MatchVariant::pm,
                           MatchVariant::tm}) {
        const Grid3d m = compute_match(v, f, t, 1.0);
        const Grid3d fp = build_head_input(f, m, v);
        EXPECT_EQ(fp.depth, head_input_depth(v, 4)) << to_string(v);
        EXPECT_EQ(parse_match_variant(to_string(v)), v);
        Grid3d gm;
        Grid3d gf;
        split_head_input_grad(fp, v, 4, gm, gf);
        if (v != MatchVariant::tm_only) EXPECT_EQ(gf.values, f.values) << to_string(v);
        if (v != MatchVariant::none) EXPECT_EQ(gm.values, m.values) << to_string(v);
    }
    EXPECT_EQ(head_input_depth(MatchVariant::tm, 512), 1024);
    EXPECT_EQ(head_input_depth(MatchVariant::tm_cos, 512), 513);
    EXPECT_THROW(parse_match_variant("fancy"), ArgumentError);
}

}  // namespace
}  // namespace tmr
