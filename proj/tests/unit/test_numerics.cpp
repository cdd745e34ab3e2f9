#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "tmr/errors.hpp"
#include "tmr/gradcheck.hpp"
#include "tmr/layers.hpp"
#include "tmr/model.hpp"
#include "tmr/optim.hpp"

namespace tmr {
namespace {

using testing::dot;
using testing::random_grid;
using testing::randomize;

// Naive zero-padded 3x3 cross-correlation, written independently of the im2col path.
Grid3d naive_conv(const Grid3d& in, const LayerParams<double>& p, int stride) {
    const int oh = (in.height + stride - 1) / stride;
    const int ow = (in.width + stride - 1) / stride;
    Grid3d out(oh, ow, p.out);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int co = 0; co < p.out; ++co) {
                double s = p.bias[co];
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int y = oy * stride + ky - 1;
                        const int x = ox * stride + kx - 1;
                        if (y < 0 || x < 0 || y >= in.height || x >= in.width) continue;
                        for (int ci = 0; ci < p.in; ++ci) {
                            s += in.at(y, x, ci) * p.weights[((ky * 3 + kx) * p.in + ci) * p.out + co];
                        }
                    }
                }
                out.at(oy, ox, co) = s;
            }
        }
    }
    return out;
}

TEST(Conv3x3, IdentityKernelReproducesInput) {
    std::mt19937_64 rng(1);
    const Grid3d in = random_grid(5, 4, 2, rng);
    auto p = LayerParams<double>::conv3x3("c", 2, 2);
    // Center tap, channel c -> c.
    for (int c = 0; c < 2; ++c) p.weights[((1 * 3 + 1) * 2 + c) * 2 + c] = 1.0;
    const Grid3d out = conv3x3_forward(in, p);
    ASSERT_TRUE(out.same_shape(in));
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_DOUBLE_EQ(out.values[i], in.values[i]);
}

TEST(Conv3x3, AllOnesKernelCountsPaddedNeighbourhood) {
    Grid3d in(3, 3, 1, 1.0);
    auto p = LayerParams<double>::conv3x3("c", 1, 1);
    std::fill(p.weights.begin(), p.weights.end(), 1.0);
    const Grid3d out = conv3x3_forward(in, p);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 4.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 6.0);
    EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 9.0);
}

TEST(Conv3x3, MatchesNaiveOracleAtStrideOneAndTwo) {
    std::mt19937_64 rng(2);
    for (int stride : {1, 2}) {
        const Grid3d in = random_grid(7, 6, 3, rng);
        auto p = LayerParams<double>::conv3x3("c", 3, 4);
        randomize(p, rng);
        const Grid3d got = conv3x3_forward(in, p, stride);
        const Grid3d want = naive_conv(in, p, stride);
        ASSERT_TRUE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.values[i], want.values[i], 1e-12);
    }
}

TEST(Conv3x3, RejectsDepthMismatch) {
    auto p = LayerParams<double>::conv3x3("c", 3, 4);
    EXPECT_THROW(conv3x3_forward(Grid3d(4, 4, 2), p), ConfigError);
}

TEST(Conv3x3, BackwardMatchesFiniteDifferences) {
    for (int seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        for (int stride : {1, 2}) {
            Grid3d in = random_grid(4, 4, 2, rng);
            auto p = LayerParams<double>::conv3x3("c", 2, 3);
            randomize(p, rng);
            const Grid3d w = random_grid(conv3x3_forward(in, p, stride).height,
                                         conv3x3_forward(in, p, stride).width, 3, rng);
            p.zero_grad();
            const Grid3d gin = conv3x3_backward(in, p, w, stride);
            std::vector<GradTarget> targets;
            append_targets(targets, p);
            append_target(targets, "input", in, gin);
            const auto report = grad_check([&] { return dot(conv3x3_forward(in, p, stride), w); }, targets);
            EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_target;
        }
    }
}

TEST(Conv3x3, FrozenLayerReceivesNoGradient) {
    std::mt19937_64 rng(3);
    const Grid3d in = random_grid(4, 4, 2, rng);
    auto p = LayerParams<double>::conv3x3("c", 2, 2);
    randomize(p, rng);
    p.trainable = false;
    p.zero_grad();
    conv3x3_backward(in, p, random_grid(4, 4, 2, rng));
    for (double g : p.grad_weights) EXPECT_EQ(g, 0.0);
    for (double g : p.grad_bias) EXPECT_EQ(g, 0.0);
}

TEST(Linear, ForwardIsPerPositionAffineMap) {
    Grid3d in(1, 2, 2);
    in.values = {1.0, 2.0, -1.0, 0.5};
    auto p = LayerParams<double>::linear("l", 2, 1);
    p.weights = {3.0, -2.0};
    p.bias = {0.25};
    const Grid3d out = linear_forward(in, p);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 3.0 - 4.0 + 0.25);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), -3.0 - 1.0 + 0.25);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
    for (int seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(100 + seed));
        Grid3d in = random_grid(3, 4, 5, rng);
        auto p = LayerParams<double>::linear("l", 5, 3);
        randomize(p, rng);
        const Grid3d w = random_grid(3, 4, 3, rng);
        p.zero_grad();
        const Grid3d gin = linear_backward(in, p, w);
        std::vector<GradTarget> targets;
        append_targets(targets, p);
        append_target(targets, "input", in, gin);
        const auto report = grad_check([&] { return dot(linear_forward(in, p), w); }, targets);
        EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_target;
    }
}

TEST(Activations, LeakyReluValuesAndGradient) {
    Grid3d in(1, 1, 3);
    in.values = {-2.0, 0.0, 3.0};
    const Grid3d out = leaky_relu(in, 0.01);
    EXPECT_DOUBLE_EQ(out.values[0], -0.02);
    EXPECT_DOUBLE_EQ(out.values[1], 0.0);
    EXPECT_DOUBLE_EQ(out.values[2], 3.0);

    std::mt19937_64 rng(4);
    Grid3d x = random_grid(4, 4, 3, rng);
    for (auto& v : x.values) v += v >= 0 ? 0.05 : -0.05;  // keep clear of the kink
    const Grid3d w = random_grid(4, 4, 3, rng);
    const Grid3d g = leaky_relu_backward(x, w, 0.01);
    std::vector<GradTarget> targets;
    append_target(targets, "x", x, g);
    EXPECT_LT(grad_check([&] { return dot(leaky_relu(x, 0.01), w); }, targets).max_rel_error, 1e-5);
}

TEST(Activations, SigmoidIsFiniteAtExtremesAndDifferentiable) {
    Grid3d in(1, 1, 4);
    in.values = {-1000.0, -40.0, 0.0, 1000.0};
    const Grid3d out = sigmoid(in);
    ASSERT_TRUE(out.all_finite());
    EXPECT_GE(out.values[0], 0.0);
    EXPECT_DOUBLE_EQ(out.values[2], 0.5);
    EXPECT_DOUBLE_EQ(out.values[3], 1.0);

    std::mt19937_64 rng(5);
    Grid3d x = random_grid(3, 3, 2, rng, -4.0, 4.0);
    const Grid3d w = random_grid(3, 3, 2, rng);
    const Grid3d g = sigmoid_backward(sigmoid(x), w);
    std::vector<GradTarget> targets;
    append_target(targets, "x", x, g);
    EXPECT_LT(grad_check([&] { return dot(sigmoid(x), w); }, targets).max_rel_error, 1e-5);
}

TEST(BilinearResize, SameSizeIsIdentityAndCornersAlign) {
    std::mt19937_64 rng(6);
    const Grid3d in = random_grid(4, 5, 2, rng);
    const Grid3d same = bilinear_resize(in, 4, 5);
    EXPECT_EQ(same.values, in.values);

    const Grid3d up = bilinear_resize(in, 7, 9);
    for (int d = 0; d < 2; ++d) {
        EXPECT_NEAR(up.at(0, 0, d), in.at(0, 0, d), 1e-12);
        EXPECT_NEAR(up.at(6, 8, d), in.at(3, 4, d), 1e-12);
        EXPECT_NEAR(up.at(0, 8, d), in.at(0, 4, d), 1e-12);
    }
    // Midpoint between rows 0 and 1 of a 2-row map is their average.
    Grid3d two(2, 1, 1);
    two.values = {1.0, 3.0};
    EXPECT_NEAR(bilinear_resize(two, 3, 1).values[1], 2.0, 1e-12);
    EXPECT_THROW(bilinear_resize(in, 0, 3), ArgumentError);
}

TEST(BilinearResize, BackwardIsTheAdjoint) {
    std::mt19937_64 rng(7);
    for (auto [oh, ow] : {std::pair{7, 9}, std::pair{2, 3}, std::pair{8, 8}}) {
        Grid3d in = random_grid(4, 5, 2, rng);
        const Grid3d w = random_grid(oh, ow, 2, rng);
        const Grid3d g = bilinear_resize_backward(w, 4, 5);
        std::vector<GradTarget> targets;
        append_target(targets, "x", in, g);
        EXPECT_LT(grad_check([&] { return dot(bilinear_resize(in, oh, ow), w); }, targets).max_rel_error, 1e-5);
    }
}

TEST(Channels, ConcatThenSplitRoundTrips) {
    std::mt19937_64 rng(8);
    const Grid3d a = random_grid(3, 2, 2, rng);
    const Grid3d b = random_grid(3, 2, 3, rng);
    const Grid3d c = concat_channels(a, b);
    ASSERT_EQ(c.depth, 5);
    EXPECT_DOUBLE_EQ(c.at(1, 1, 0), a.at(1, 1, 0));
    EXPECT_DOUBLE_EQ(c.at(1, 1, 4), b.at(1, 1, 2));
    Grid3d ga;
    Grid3d gb;
    split_channels(c, 2, ga, gb);
    EXPECT_EQ(ga.values, a.values);
    EXPECT_EQ(gb.values, b.values);
}

TEST(AdamW, SingleStepMatchesHandComputation) {
    auto p = LayerParams<double>::linear("l", 1, 1);
    p.weights = {0.5};
    p.bias = {-0.2};
    p.grad_weights = {0.1};
    p.grad_bias = {-0.3};
    OptimState state;
    state.config.lr = 0.01;
    state.config.weight_decay = 0.1;
    std::vector<LayerParams<double>*> params{&p};
    optimizer_step<double>(params, state);
    // First step: mhat = g, vhat = g^2, so the Adam term is lr * g / (|g| + eps).
    const double eps = state.config.eps;
    const double w = 0.5 - 0.01 * 0.1 * 0.5 - 0.01 * 0.1 / (0.1 + eps);
    const double b = -0.2 - 0.01 * 0.1 * -0.2 - 0.01 * -0.3 / (0.3 + eps);
    EXPECT_NEAR(p.weights[0], w, 1e-12);
    EXPECT_NEAR(p.bias[0], b, 1e-12);
    EXPECT_EQ(state.step, 1);
    EXPECT_EQ(p.grad_weights[0], 0.0);
    EXPECT_EQ(p.grad_bias[0], 0.0);
}

TEST(AdamW, FrozenLayersAreSkipped) {
    auto p = LayerParams<double>::linear("l", 1, 1);
    p.weights = {0.5};
    p.grad_weights = {1.0};
    p.trainable = false;
    OptimState state;
    std::vector<LayerParams<double>*> params{&p};
    optimizer_step<double>(params, state);
    EXPECT_EQ(p.weights[0], 0.5);
    EXPECT_TRUE(state.moments.empty());
}

TEST(GradCheck, FlagsAWrongGradient) {
    std::vector<double> x{1.0, 2.0};
    std::vector<double> wrong{2.0, 4.5};  // true gradient of x0^2 + x1^2 is (2, 4)
    std::vector<GradTarget> targets{{"x", x, wrong}};
    const auto report = grad_check([&] { return x[0] * x[0] + x[1] * x[1]; }, targets);
    EXPECT_GT(report.max_rel_error, 1e-2);
    EXPECT_FALSE(report.passed(1e-4));
    EXPECT_EQ(x[0], 1.0);  // values restored
}

TEST(GradCheck, SkipsEntriesThatStraddleAKink) {
    std::vector<double> x{0.5e-4, 1.0};
    std::vector<double> grad{1.0, 1.0};  // |x0| + x1, analytic slope taken on the positive side
    std::vector<std::uint8_t> piece;
    const auto loss = [&] {
        piece = {static_cast<std::uint8_t>(x[0] > 0)};
        return std::abs(x[0]) + x[1];
    };
    GradCheckOptions opts;
    opts.piece_signature = [&] { return piece; };
    std::vector<GradTarget> targets{{"x", x, grad}};
    const auto report = grad_check(loss, targets, opts);
    EXPECT_EQ(report.targets[0].skipped, 1U);
    EXPECT_EQ(report.targets[0].checked, 1U);
    EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, NonFiniteLossThrows) {
    std::vector<double> x{1.0};
    std::vector<double> g{0.0};
    std::vector<GradTarget> targets{{"x", x, g}};
    EXPECT_THROW(grad_check([] { return std::nan(""); }, targets), NumericError);
}

TEST(ParameterCount, ReferenceArchitectureHasAbout19MillionParameters) {
    ModelConfig cfg;
    cfg.backbone.mode = FeatureSource::precomputed;
    cfg.backbone.input_channels = 256;
    cfg.backbone.projection_out = 512;
    const Model<float> m(cfg);
    EXPECT_EQ(m.params().projection.parameter_count(), 131584U);
    EXPECT_EQ(m.params().tm_scale.parameter_count(), 1U);
    EXPECT_EQ(m.params().box.conv.parameter_count(), 9438208U);
    EXPECT_EQ(m.params().pres.conv.parameter_count(), 9438208U);
    EXPECT_EQ(m.params().box.linear.parameter_count(), 4100U);
    EXPECT_EQ(m.params().pres.linear.parameter_count(), 1025U);
    EXPECT_EQ(m.parameter_count(), 19013126U);
}

}  // namespace
}  // namespace tmr
