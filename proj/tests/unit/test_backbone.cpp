#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "record/error.hpp"
#include "record/backbone.hpp"
#include "record/toy_backbone.hpp"

using namespace record;

TEST(Noise, DeterministicPerSeed) {
    EXPECT_EQ(gaussian_noise(7, 100), gaussian_noise(7, 100));
    EXPECT_NE(gaussian_noise(7, 100), gaussian_noise(8, 100));
    const auto v = gaussian_noise(1, 20000);
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s += (x - m) * (x - m);
    s /= v.size();
    EXPECT_NEAR(m, 0.0, 0.03);
    EXPECT_NEAR(s, 1.0, 0.05);
}

TEST(Schedule, LinearEndpointsAndValidation) {
    const auto s = SamplerSchedule::linear(50);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    EXPECT_NEAR(s.alpha_bar(1), 0.99, 1e-15);
    EXPECT_NEAR(s.alpha_bar(50), 0.05, 1e-15);
    EXPECT_THROW(s.alpha_bar(51), ScheduleExhausted);
    EXPECT_THROW(SamplerSchedule::linear(0), InvalidConfig);
    SamplerSchedule bad = s;
    bad.alphas_bar[10] = bad.alphas_bar[9];
    EXPECT_THROW(bad.validate(), InvalidConfig);
}

TEST(Sampler, DdimStepMatchesReference) {
    const auto s = SamplerSchedule::linear(10);
    LatentState z = initial_latent({2, 2, 2}, 3, 7);
    const auto eps = gaussian_noise(4, z.z.size());
    const auto next = sampler_step(z, eps, s);
    EXPECT_EQ(next.t, 6);
    const double ab = s.alpha_bar(7), ab1 = s.alpha_bar(6);
    for (std::size_t i = 0; i < z.z.size(); ++i) {
        const double x0 = (z.z[i] - std::sqrt(1 - ab) * eps[i]) / std::sqrt(ab);
        EXPECT_NEAR(next.z[i], std::sqrt(ab1) * x0 + std::sqrt(1 - ab1) * eps[i], 1e-12);
    }
    z.t = 0;
    EXPECT_THROW(sampler_step(z, eps, s), ScheduleExhausted);
}

TEST(Sampler, LastStepReturnsPredictedX0) {
    const auto s = SamplerSchedule::linear(4);
    const LatentState z = initial_latent({1, 2, 2}, 9, 1);
    const auto eps = gaussian_noise(10, z.z.size());
    const auto next = sampler_step(z, eps, s);
    for (std::size_t i = 0; i < z.z.size(); ++i)
        EXPECT_NEAR(next.z[i], (z.z[i] - std::sqrt(1 - s.alpha_bar(1)) * eps[i]) / std::sqrt(s.alpha_bar(1)), 1e-12);
}

TEST(Guidance, ScaleOneIsExactAndLinear) {
    const std::vector<double> c{1.0, -2.0, 0.25}, u{0.5, 0.5, 0.5};
    EXPECT_EQ(guided_noise(c, u, 1.0), c);
    const auto g = guided_noise(c, u, 7.5);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(g[i], u[i] + 7.5 * (c[i] - u[i]), 1e-14);
    EXPECT_THROW(guided_noise(c, std::vector<double>{1.0}, 2.0), ShapeMismatch);
}

TEST(Layers, DefaultHookLayersAreTwoCoarsest) {
    const std::vector<LayerInfo> layers{{"a", 64}, {"b", 16}, {"c", 32}, {"d", 16}, {"e", 8}};
    EXPECT_EQ(default_hook_layers(layers), (std::vector<std::string>{"b", "d", "e"}));
    EXPECT_EQ(select_layers(layers, {32}), (std::vector<std::string>{"c"}));
    EXPECT_EQ(select_layers(layers, {}), default_hook_layers(layers));
}

class ToyTest : public ::testing::Test {
protected:
    ToyBackbone bb;
    TextEmbedding text = bb.encode({"a", "man", "is", "riding", "a", "horse"}, Stream::Full);
};

TEST_F(ToyTest, ShapesAndMaps) {
    EXPECT_EQ(bb.latent_shape(), (LatentShape{4, 8, 8}));
    const auto z = initial_latent(bb.latent_shape(), 1, 10);
    const auto out = bb.predict_noise(z, {10, 0.5}, text, nullptr);
    ASSERT_EQ(out.noise.size(), z.z.size());
    const auto& cross = out.maps.layer(ToyBackbone::kCrossLayer);
    EXPECT_EQ(cross.maps.rows(), 64u);
    EXPECT_EQ(cross.maps.cols(), 6u);
    EXPECT_TRUE(rows_sum_to_one(cross.maps, 1e-12));
    EXPECT_TRUE(rows_sum_to_one(out.maps.self_.at(ToyBackbone::kSelfLayer), 1e-12));
    EXPECT_EQ(bb.decode(z).width, 64);
}

// With every cross row forced to the uniform distribution, the attention
// output is the mean value vector at every position, self-attention mixes a
// constant, and x0 = mean(V) + mu z.
TEST_F(ToyTest, ClosedFormUnderUniformCrossMaps) {
    const auto z = initial_latent(bb.latent_shape(), 2, 10);
    AttentionHooks hooks;
    hooks.on_cross = [](const Timestep&, CrossAttentionLayer& l) {
        for (double& v : l.maps.flat()) v = 1.0 / static_cast<double>(l.maps.cols());
    };
    const double ab = 0.4;
    const auto out = bb.predict_noise(z, {10, ab}, text, &hooks);
    const Matrix v = bb.values(text);
    const auto& p = bb.params();
    const std::size_t P = z.shape.positions();
    for (int c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t n = 0; n < v.rows(); ++n) mean += v(n, c);
        mean /= static_cast<double>(v.rows());
        for (std::size_t q = 0; q < P; ++q) {
            const double x0 = mean + p.latent_passthrough * z.at(c, q);
            const double eps = (z.at(c, q) - std::sqrt(ab) * x0) / std::sqrt(1 - ab);
            EXPECT_NEAR(out.noise[c * P + q], eps, 1e-12);
        }
    }
}

TEST_F(ToyTest, ValuesFollowKeys) {
    const Matrix k = bb.keys(text), v = bb.values(text);
    EXPECT_EQ(k.rows(), 6u);
    EXPECT_EQ(v.cols(), 4u);
    // Identical tokens get identical keys and values.
    EXPECT_EQ(k.column(0), k.column(0));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(v(0, c), v(4, c));
}

TEST_F(ToyTest, HookShapeChangeIsRejected) {
    const auto z = initial_latent(bb.latent_shape(), 3, 5);
    AttentionHooks hooks;
    hooks.on_cross = [](const Timestep&, CrossAttentionLayer& l) { l.maps = Matrix(2, 2); };
    EXPECT_THROW(bb.predict_noise(z, {5, 0.5}, text, &hooks), HookShapeMismatch);
    hooks.on_cross = nullptr;
    hooks.on_self = [](const Timestep&, const LayerInfo&, Matrix& m) { m = Matrix(1, 1); };
    EXPECT_THROW(bb.predict_noise(z, {5, 0.5}, text, &hooks), HookShapeMismatch);
}

TEST_F(ToyTest, InvalidInputs) {
    LatentState z = initial_latent({4, 4, 4}, 1, 5);
    EXPECT_THROW(bb.predict_noise(z, {5, 0.5}, text, nullptr), BackboneFailure);
    z = initial_latent(bb.latent_shape(), 1, 5);
    EXPECT_THROW(bb.predict_noise(z, {0, 1.0}, text, nullptr), BackboneFailure);
    z.z[3] = std::nan("");
    EXPECT_THROW(bb.predict_noise(z, {5, 0.5}, text, nullptr), BackboneFailure);
    EXPECT_THROW(bb.encode({}, Stream::Full), BackboneFailure);
}

TEST_F(ToyTest, VjpMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    const auto z = initial_latent(bb.latent_shape(), 4, 20);
    std::vector<double> up(64);
    for (double& u : up) u = g(rng);
    const std::size_t token = 5;
    const auto f = [&](const LatentState& s) {
        const auto out = bb.predict_noise(s, {20, 0.3}, text, nullptr);
        const auto col = out.maps.layer(ToyBackbone::kCrossLayer).maps.column(token);
        double acc = 0;
        for (std::size_t p = 0; p < 64; ++p) acc += up[p] * col[p];
        return acc;
    };
    const auto grad = bb.cross_attention_vjp(z, {20, 0.3}, text, ToyBackbone::kCrossLayer, token, up);
    for (int probe = 0; probe < 10; ++probe) {
        std::vector<double> v(z.z.size());
        for (double& x : v) x = g(rng);
        LatentState a = z, b = z;
        double an = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            a.z[i] += 1e-6 * v[i];
            b.z[i] -= 1e-6 * v[i];
            an += grad[i] * v[i];
        }
        const double fd = (f(a) - f(b)) / 2e-6;
        EXPECT_NEAR(fd, an, 1e-6 * (1 + std::fabs(an)));
    }
    EXPECT_THROW(bb.cross_attention_vjp(z, {20, 0.3}, text, "nope", token, up), BackboneFailure);
}

TEST_F(ToyTest, DecodeRangeAndDeterminism) {
    const auto z = initial_latent(bb.latent_shape(), 5, 0);
    const Image a = bb.decode(z), b = bb.decode(z);
    EXPECT_EQ(a, b);
    for (double v : a.pixels) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}
