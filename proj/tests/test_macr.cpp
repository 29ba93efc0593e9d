#include "gradcheck.hpp"
#include "model_fixtures.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/errors.hpp"
#include "univ2d/macr.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace univ2d;
using namespace univ2d::testing;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ModelConfig small_four_level() {
    ModelConfig c = four_level_config();
    c.channels = {4, 8, 12, 16};
    return c;
}

struct MacrRig {
    ModelConfig config;
    ParamStore store;

    explicit MacrRig(ModelConfig c, std::uint64_t seed = 11) : config(std::move(c)) {
        ParamSpecList specs;
        declare_encoder(specs, config, "enc");
        declare_macr(specs, config);
        store = init_params(specs, seed);
    }

    MacrOutput run(const ag::Var& images, const ag::Var& mask, Mode mode = {}) {
        Context ctx(store, mode);
        return macr_forward(ctx, encode(ctx, images, config), mask, config);
    }
};

ParamStore step_store(int prev_c, int c, bool modulation = true) {
    ParamSpecList specs;
    declare_decode_step(specs, "t", prev_c, c);
    if (modulation) {
        nn::declare_conv(specs, "t.w1", c / 2 + 1, c / 2, 3);
        nn::declare_conv(specs, "t.w2", c / 2, c / 2, 3);
        nn::declare_conv(specs, "t.res", c / 2, c, 3);
    }
    nn::declare_bn(specs, "t.bn", c);
    return init_params(specs, 12);
}

ag::Var random_mask(int n, int h, int w, std::uint64_t seed) {
    return ag::Var::constant(random_tensor(Shape{n, 1, h, w}, seed, 0.0, 1.0));
}

} // namespace

TEST(MacrDecodeStep, HalvesThenConcatenatesToSkipWidth) {
    ParamStore store = step_store(16, 12);
    Context ctx(store, Mode{});
    const ag::Var g = macr_decode_step(ctx, "t", ag::Var::constant(random_tensor(Shape{2, 16, 4, 4}, 1)),
                                       ag::Var::constant(random_tensor(Shape{2, 12, 8, 8}, 2)));
    EXPECT_EQ(g.shape(), (Shape{2, 12, 8, 8}));
}

TEST(MacrDecodeStep, OddSkipResolutionRejected) {
    ParamStore store = step_store(16, 12);
    Context ctx(store, Mode{});
    EXPECT_THROW(macr_decode_step(ctx, "t", ag::Var::constant(Tensor(Shape{1, 16, 4, 4})),
                                  ag::Var::constant(Tensor(Shape{1, 12, 9, 9}))),
                 ShapeError);
}

TEST(MacrDecodeStep, ZeroPreviousStateGivesZeroLeftHalf) {
    ParamStore store = step_store(16, 12);
    Context ctx(store, Mode{});
    const Tensor g = macr_decode_step(ctx, "t", ag::Var::constant(Tensor(Shape{1, 16, 4, 4})),
                                      ag::Var::constant(random_tensor(Shape{1, 12, 8, 8}, 3)))
                         .value();
    double left = 0.0;
    double right = 0.0;
    for (int c = 0; c < 12; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) (c < 6 ? left : right) += std::abs(g.at(0, c, y, x));
    EXPECT_EQ(left, 0.0);
    EXPECT_GT(right, 0.0);
}

TEST(MacrMaskWeight, ZeroSecondConvGivesHalf) {
    ParamStore store = step_store(16, 12);
    fill_params(store, "t.w2", 0.0);
    Context ctx(store, Mode{});
    const Tensor w = mask_weight(ctx, "t", ag::Var::constant(random_tensor(Shape{1, 6, 8, 8}, 4)),
                                 random_mask(1, 16, 16, 5))
                         .value();
    EXPECT_EQ(w.shape(), (Shape{1, 6, 8, 8}));
    EXPECT_EQ(w.min(), 0.5);
    EXPECT_EQ(w.max(), 0.5);
}

TEST(MacrMaskWeight, SinglePixelMatchesHandEvaluation) {
    // Two-channel state: one left channel plus the mask. On a 1x1 grid only
    // the kernel centres see data.
    ParamStore store = step_store(4, 2);
    const double a = 0.6, b = -1.1, b1 = 0.3, v = 1.7, b2 = -0.2;
    std::vector<double> w1(18, 0.0);
    w1[4] = a;
    w1[13] = b;
    set_param(store, "t.w1.w", w1);
    set_param(store, "t.w1.b", {b1});
    std::vector<double> w2(9, 0.0);
    w2[4] = v;
    set_param(store, "t.w2.w", w2);
    set_param(store, "t.w2.b", {b2});
    Context ctx(store, Mode{});
    for (const double g : {-0.9, 0.4}) {
        for (const double m : {0.0, 0.25, 1.0}) {
            const Tensor w = mask_weight(ctx, "t", ag::Var::constant(Tensor(Shape{1, 1, 1, 1}, {g})),
                                         ag::Var::constant(Tensor(Shape{1, 1, 1, 1}, {m})))
                                 .value();
            EXPECT_NEAR(w[0], sigmoid(v * std::max(0.0, a * g + b * m + b1) + b2), 1e-12);
        }
    }
}

TEST(MacrMaskWeight, MultiChannelMaskRejected) {
    ParamStore store = step_store(16, 12);
    Context ctx(store, Mode{});
    EXPECT_THROW(mask_weight(ctx, "t", ag::Var::constant(Tensor(Shape{1, 6, 8, 8})),
                             ag::Var::constant(Tensor(Shape{1, 2, 8, 8}))),
                 ShapeError);
}

TEST(MacrModulate, ZeroResidualReducesToNormalizedState) {
    ParamStore store = step_store(16, 12);
    fill_params(store, "t.res", 0.0);
    Context ctx(store, Mode{});
    const Tensor g = random_tensor(Shape{1, 12, 4, 4}, 6);
    const Tensor out = modulate(ctx, "t", ag::Var::constant(g),
                                ag::Var::constant(random_tensor(Shape{1, 6, 4, 4}, 7, 0.0, 1.0)))
                           .value();
    // Fresh running statistics: mean 0, variance 1, unit gamma, zero beta.
    const double inv = 1.0 / std::sqrt(1.0 + kBatchNormEps);
    for (std::size_t i = 0; i < g.numel(); ++i) {
        EXPECT_NEAR(out[i], std::max(0.0, g[i] * inv), 1e-12);
    }
}

TEST(MacrModulate, ZeroWeightMapIgnoresResidualKernel) {
    ParamStore store = step_store(16, 12);
    const ag::Var g = ag::Var::constant(random_tensor(Shape{1, 12, 4, 4}, 8));
    const ag::Var w = ag::Var::constant(Tensor(Shape{1, 6, 4, 4}, 0.0));
    Context ctx(store, Mode{});
    const Tensor first = modulate(ctx, "t", g, w).value();
    fill_params(store, "t.res.w", 3.0);
    const Tensor second = modulate(ctx, "t", g, w).value();
    EXPECT_TRUE(first == second);
}

TEST(MacrModulate, OutputNonNegativeAndShapeChecked) {
    ParamStore store = step_store(16, 12);
    Context ctx(store, Mode{});
    const Tensor out = modulate(ctx, "t", ag::Var::constant(random_tensor(Shape{2, 12, 4, 4}, 9, -3, 3)),
                                ag::Var::constant(random_tensor(Shape{2, 6, 4, 4}, 10, 0.0, 1.0)))
                           .value();
    EXPECT_GE(out.min(), 0.0);
    EXPECT_THROW(modulate(ctx, "t", ag::Var::constant(Tensor(Shape{1, 12, 4, 4})),
                          ag::Var::constant(Tensor(Shape{1, 12, 4, 4}))),
                 ShapeError);
}

TEST(MacrForward, FourLevelShapesFollowSchedule) {
    MacrRig rig(small_four_level());
    const MacrOutput out = rig.run(random_images(1, 32, 32, 13), random_mask(1, 32, 32, 14));
    EXPECT_EQ(out.image.shape(), (Shape{1, 3, 32, 32}));
    ASSERT_EQ(out.decoder_features.size(), 3u);
    EXPECT_EQ(out.decoder_features[0].shape(), (Shape{1, 4, 32, 32}));
    EXPECT_EQ(out.decoder_features[1].shape(), (Shape{1, 8, 16, 16}));
    EXPECT_EQ(out.decoder_features[2].shape(), (Shape{1, 12, 8, 8}));
    EXPECT_GT(out.image.value().min(), 0.0);
    EXPECT_LT(out.image.value().max(), 1.0);
    for (const auto& f : out.decoder_features) {
        EXPECT_GE(f.value().min(), 0.0);
    }
}

TEST(MacrForward, MaskShapeValidated) {
    MacrRig rig(ModelConfig::tiny());
    EXPECT_THROW(rig.run(random_images(1, 16, 16, 15), random_mask(1, 8, 8, 16)), ShapeError);
}

TEST(MacrForward, MaskChangesOutputOnlyWhenEnabled) {
    const ag::Var img = random_images(1, 16, 16, 17);
    const ag::Var m1 = random_mask(1, 16, 16, 18);
    const ag::Var m2 = random_mask(1, 16, 16, 19);

    MacrRig on(ModelConfig::tiny());
    EXPECT_FALSE(on.run(img, m1).image.value() == on.run(img, m2).image.value());

    ModelConfig c = ModelConfig::tiny();
    c.enable_macr = false;
    MacrRig off(c);
    EXPECT_FALSE(off.store.has_param("macr.l0.w1.w"));
    EXPECT_TRUE(off.run(img, m1).image.value() == off.run(img, m2).image.value());
}

TEST(MacrForward, GradientWithRespectToMaskMatchesFiniteDifferences) {
    MacrRig rig(ModelConfig::tiny());
    const ag::Var img = random_images(2, 16, 16, 20);
    ag::Var mask = ag::Var::leaf(random_tensor(Shape{2, 1, 16, 16}, 21, 0.05, 0.95), true);
    auto loss = [&] { return ag::mean_all(rig.run(img, mask, Mode{.training = true}).image); };
    const auto probes = check_all(loss, {mask});
    double total = 0.0;
    for (const auto& p : probes) {
        EXPECT_LT(p.rel_err, kGradTolerance) << p.label;
        total += std::abs(p.analytic);
    }
    EXPECT_GT(total, 0.0);
}

TEST(MacrForward, GradientOfModulationParamsMatchesFiniteDifferences) {
    MacrRig rig(ModelConfig::tiny());
    const ag::Var img = random_images(2, 16, 16, 22);
    const ag::Var mask = random_mask(2, 16, 16, 23);
    std::vector<ag::Var> leaves;
    for (const auto& name : rig.store.names_with_prefix("macr.")) {
        leaves.push_back(rig.store.param(name));
    }
    auto loss = [&] { return ag::mean_all(rig.run(img, mask, Mode{.training = true}).image); };
    for (const auto& p : check_all(loss, leaves)) {
        EXPECT_LT(p.rel_err, kGradTolerance) << p.label;
    }
}
