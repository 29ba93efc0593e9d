#include "gradcheck.hpp"
#include "model_fixtures.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/errors.hpp"
#include "univ2d/refinement.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace univ2d;
using namespace univ2d::testing;

namespace {

ag::Var cst(Tensor t) { return ag::Var::constant(std::move(t)); }

ModelConfig small_four_level() {
    ModelConfig c = four_level_config();
    c.channels = {4, 8, 12, 16};
    return c;
}

ParamStore clfm_store(const ModelConfig& c, std::uint64_t seed = 31) {
    ParamSpecList specs;
    declare_clfm(specs, c);
    return init_params(specs, seed);
}

std::vector<ag::Var> clfm_inputs(const ModelConfig& c, int n, int h, std::uint64_t seed) {
    std::vector<ag::Var> v;
    for (int k = 0; k < clfm_input_count(c); ++k) {
        v.push_back(cst(random_tensor(Shape{n, c.channels[static_cast<std::size_t>(k)], h >> k, h >> k},
                                      seed + static_cast<std::uint64_t>(k))));
    }
    return v;
}

struct RefineRig {
    ModelConfig config;
    ParamStore store;

    explicit RefineRig(ModelConfig c) : config(std::move(c)) {
        ParamSpecList specs;
        declare_refinement(specs, config);
        if (config.shared_refinement_encoder) {
            declare_encoder(specs, config, "enc");
        }
        store = init_params(specs, 33);
    }

    std::vector<ag::Var> stage1(int n, int h, std::uint64_t seed) const {
        std::vector<ag::Var> v;
        for (int l = 0; l + 1 < config.levels; ++l) {
            v.push_back(cst(random_tensor(Shape{n, config.channels[static_cast<std::size_t>(l)], h >> l, h >> l},
                                          seed + static_cast<std::uint64_t>(l), 0.0, 1.0)));
        }
        return v;
    }

    RefineOutput run(const ag::Var& raw, const ag::Var& restored, const ag::Var& mask,
                     const std::vector<ag::Var>& sal, const std::vector<ag::Var>& res, Mode mode = {}) {
        Context ctx(store, mode);
        return refine_forward(ctx, raw, restored, mask, sal, res, config);
    }
};

} // namespace

// ---- composite ----

TEST(Composite, UnitMaskReturnsRestoredAndZeroMaskReturnsRaw) {
    const ag::Var restored = random_images(2, 8, 8, 1);
    const ag::Var raw = random_images(2, 8, 8, 2);
    EXPECT_TRUE(composite_image(restored, cst(Tensor(Shape{2, 1, 8, 8}, 1.0)), raw).value() ==
                restored.value());
    EXPECT_TRUE(composite_image(restored, cst(Tensor(Shape{2, 1, 8, 8}, 0.0)), raw).value() ==
                raw.value());
}

TEST(Composite, BoundedByInputsPerPixel) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor r = random_tensor(Shape{1, 3, 6, 6}, 100 + s, 0.0, 1.0);
        const Tensor x = random_tensor(Shape{1, 3, 6, 6}, 200 + s, 0.0, 1.0);
        const Tensor m = random_tensor(Shape{1, 1, 6, 6}, 300 + s, 0.0, 1.0);
        const Tensor c = composite_image(cst(r), cst(m), cst(x)).value();
        for (std::size_t i = 0; i < c.numel(); ++i) {
            EXPECT_GE(c[i], std::min(r[i], x[i]) - 1e-15);
            EXPECT_LE(c[i], std::max(r[i], x[i]) + 1e-15);
        }
    }
}

TEST(Composite, MatchesPerPixelBlendAndBroadcastsMask) {
    const Tensor r = random_tensor(Shape{1, 3, 4, 4}, 3, 0.0, 1.0);
    const Tensor x = random_tensor(Shape{1, 3, 4, 4}, 4, 0.0, 1.0);
    const Tensor m = random_tensor(Shape{1, 1, 4, 4}, 5, 0.0, 1.0);
    const Tensor c = composite_image(cst(r), cst(m), cst(x)).value();
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) {
                const double mv = m.at(0, 0, y, xx);
                EXPECT_NEAR(c.at(0, ch, y, xx), r.at(0, ch, y, xx) * mv + (1 - mv) * x.at(0, ch, y, xx), 1e-15);
            }
}

TEST(Composite, MisalignedInputsRejected) {
    EXPECT_THROW(composite_image(random_images(1, 8, 8, 6), cst(Tensor(Shape{1, 1, 8, 4})),
                                 random_images(1, 8, 8, 7)),
                 ShapeError);
    EXPECT_THROW(composite_image(random_images(1, 8, 8, 6), cst(Tensor(Shape{1, 3, 8, 8})),
                                 random_images(1, 8, 8, 7)),
                 ShapeError);
}

// ---- cross-level modulation ----

TEST(Clfm, InputCountCapsAtThree) {
    EXPECT_EQ(clfm_input_count(ModelConfig::tiny()), 2);
    EXPECT_EQ(clfm_input_count(small_four_level()), 3);
}

TEST(Clfm, FourLevelOutputsSitOneLevelCoarser) {
    const ModelConfig c = small_four_level();
    ParamStore store = clfm_store(c);
    EXPECT_TRUE(store.has_param("ref.clfm.up0.main.conv.w"));
    EXPECT_TRUE(store.has_param("ref.clfm.up1.main.conv.w"));
    EXPECT_FALSE(store.has_param("ref.clfm.up2.main.conv.w"));
    Context ctx(store, Mode{});
    const auto out = clfm(ctx, clfm_inputs(c, 1, 32, 40), c);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].shape(), (Shape{1, 8, 16, 16}));
    EXPECT_EQ(out[1].shape(), (Shape{1, 12, 8, 8}));
    EXPECT_EQ(out[2].shape(), (Shape{1, 16, 4, 4}));
}

TEST(Clfm, TwoLevelEmitsSingleOutput) {
    const ModelConfig c = ModelConfig::tiny();
    ParamStore store = clfm_store(c);
    Context ctx(store, Mode{});
    const auto out = clfm(ctx, clfm_inputs(c, 2, 16, 41), c);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].shape(), (Shape{2, 8, 8, 8}));
}

TEST(Clfm, ZeroInputsGiveZeroOutputs) {
    const ModelConfig c = small_four_level();
    ParamStore store = clfm_store(c);
    std::vector<ag::Var> zeros;
    for (const auto& v : clfm_inputs(c, 1, 16, 42)) {
        zeros.push_back(cst(Tensor(v.shape(), 0.0)));
    }
    Context ctx(store, Mode{});
    for (const auto& d : clfm(ctx, zeros, c)) {
        EXPECT_EQ(d.value().min(), 0.0);
        EXPECT_EQ(d.value().max(), 0.0);
    }
}

TEST(Clfm, LinearProbeModeIsAdditive) {
    const ModelConfig c = small_four_level();
    ParamStore store = clfm_store(c);
    const auto a = clfm_inputs(c, 1, 16, 43);
    const auto b = clfm_inputs(c, 1, 16, 53);
    std::vector<ag::Var> sum;
    for (std::size_t k = 0; k < a.size(); ++k) {
        sum.push_back(a[k] + b[k]);
    }
    Context ctx(store, Mode{.linear_probe = true});
    const auto da = clfm(ctx, a, c);
    const auto db = clfm(ctx, b, c);
    const auto ds = clfm(ctx, sum, c);
    for (std::size_t k = 0; k < ds.size(); ++k) {
        const Tensor& s = ds[k].value();
        for (std::size_t i = 0; i < s.numel(); ++i) {
            EXPECT_NEAR(s[i], da[k].value()[i] + db[k].value()[i], 1e-10);
        }
    }
}

TEST(Clfm, WrongInputsRejected) {
    const ModelConfig c = small_four_level();
    ParamStore store = clfm_store(c);
    Context ctx(store, Mode{});
    auto in = clfm_inputs(c, 1, 16, 44);
    in.pop_back();
    EXPECT_THROW(clfm(ctx, in, c), ShapeError);
    in = clfm_inputs(c, 1, 16, 45);
    in[1] = cst(Tensor(Shape{1, 8, 6, 6}));
    EXPECT_THROW(clfm(ctx, in, c), ShapeError);
}

// ---- refine_forward ----

TEST(Refine, OutputsHaveInputResolutionAndUnitRange) {
    RefineRig rig(small_four_level());
    const ag::Var raw = random_images(2, 32, 32, 50);
    const RefineOutput out = rig.run(raw, random_images(2, 32, 32, 51), cst(random_tensor(Shape{2, 1, 32, 32}, 52, 0, 1)),
                                     rig.stage1(2, 32, 53), rig.stage1(2, 32, 63));
    EXPECT_EQ(out.image.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(out.mask.shape(), (Shape{2, 1, 32, 32}));
    EXPECT_EQ(out.composite.shape(), (Shape{2, 3, 32, 32}));
    for (const auto* t : {&out.image.value(), &out.mask.value()}) {
        EXPECT_GT(t->min(), 0.0);
        EXPECT_LT(t->max(), 1.0);
    }
}

TEST(Refine, WithoutFusionMaskIsIgnoredAndRawIsUsed) {
    ModelConfig c = ModelConfig::tiny();
    c.enable_smf = false;
    RefineRig rig(c);
    const ag::Var raw = random_images(1, 16, 16, 54);
    const ag::Var restored = random_images(1, 16, 16, 55);
    const auto sal = rig.stage1(1, 16, 56);
    const auto res = rig.stage1(1, 16, 57);
    const RefineOutput a = rig.run(raw, restored, cst(Tensor(Shape{1, 1, 16, 16}, 0.1)), sal, res);
    const RefineOutput b = rig.run(raw, restored, cst(Tensor(Shape{1, 1, 16, 16}, 0.9)), sal, res);
    EXPECT_TRUE(a.composite.value() == raw.value());
    EXPECT_TRUE(a.image.value() == b.image.value());
    EXPECT_TRUE(a.mask.value() == b.mask.value());
}

TEST(Refine, WithFusionMaskChangesOutput) {
    RefineRig rig(ModelConfig::tiny());
    const ag::Var raw = random_images(1, 16, 16, 58);
    const ag::Var restored = random_images(1, 16, 16, 59);
    const auto sal = rig.stage1(1, 16, 60);
    const auto res = rig.stage1(1, 16, 61);
    const RefineOutput a = rig.run(raw, restored, cst(Tensor(Shape{1, 1, 16, 16}, 0.1)), sal, res);
    const RefineOutput b = rig.run(raw, restored, cst(Tensor(Shape{1, 1, 16, 16}, 0.9)), sal, res);
    EXPECT_FALSE(a.image.value() == b.image.value());
}

TEST(Refine, SharedEncoderDeclaresNoSeparateWeights) {
    ModelConfig c = ModelConfig::tiny();
    c.shared_refinement_encoder = true;
    ParamSpecList specs;
    declare_refinement(specs, c);
    for (const auto& p : specs.params()) {
        EXPECT_NE(p.name.rfind("renc", 0), 0u) << p.name;
    }
    RefineRig rig(c);
    const RefineOutput out = rig.run(random_images(1, 16, 16, 62), random_images(1, 16, 16, 63),
                                     cst(Tensor(Shape{1, 1, 16, 16}, 0.5)), rig.stage1(1, 16, 64),
                                     rig.stage1(1, 16, 65));
    EXPECT_EQ(out.image.shape(), (Shape{1, 3, 16, 16}));
}

TEST(Refine, StageOneFeatureCountAndShapeValidated) {
    RefineRig rig(ModelConfig::tiny());
    const ag::Var raw = random_images(1, 16, 16, 66);
    const ag::Var m = cst(Tensor(Shape{1, 1, 16, 16}, 0.5));
    EXPECT_THROW(rig.run(raw, raw, m, {}, rig.stage1(1, 16, 67)), ShapeError);
    std::vector<ag::Var> bad{cst(Tensor(Shape{1, 4, 8, 8}))};
    EXPECT_THROW(rig.run(raw, raw, m, bad, rig.stage1(1, 16, 68)), ShapeError);
}

TEST(Refine, EncoderGradientsMatchFiniteDifferences) {
    RefineRig rig(ModelConfig::tiny());
    const ag::Var raw = random_images(2, 16, 16, 70);
    const ag::Var restored = random_images(2, 16, 16, 71);
    const ag::Var mask = cst(random_tensor(Shape{2, 1, 16, 16}, 72, 0.0, 1.0));
    const auto sal = rig.stage1(2, 16, 73);
    const auto res = rig.stage1(2, 16, 74);
    std::vector<ag::Var> leaves;
    for (const auto& name : rig.store.names_with_prefix("renc.")) {
        leaves.push_back(rig.store.param(name));
    }
    for (const auto& name : rig.store.names_with_prefix("ref.clfm.")) {
        leaves.push_back(rig.store.param(name));
    }
    ASSERT_FALSE(leaves.empty());
    auto loss = [&] {
        const RefineOutput o = rig.run(raw, restored, mask, sal, res, Mode{.training = true});
        return ag::mean_all(o.image) + ag::mean_all(o.mask);
    };
    for (const auto& p : check_all(loss, leaves)) {
        EXPECT_LT(p.rel_err, kGradTolerance) << p.label << " " << p.analytic << " vs " << p.numeric;
    }
}
