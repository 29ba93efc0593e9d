#include "univ2d/macr.hpp"

#include "univ2d/errors.hpp"

namespace univ2d {

namespace {

std::string level_prefix(int i) { return "macr.l" + std::to_string(i); }

} // namespace

void declare_decode_step(ParamSpecList& specs, const std::string& name, int prev_channels,
                         int channels) {
    const int half = channels / 2;
    nn::declare_res_up(specs, name + ".up", prev_channels, half);
    nn::declare_cbr(specs, name + ".cnr", half, half, 3);
    nn::declare_conv(specs, name + ".skip", channels, half, 1);
}

void declare_macr(ParamSpecList& specs, const ModelConfig& config) {
    const auto& ch = config.channels;
    for (int i = config.levels - 2; i >= 0; --i) {
        const std::string prefix = level_prefix(i);
        const int c = ch[static_cast<std::size_t>(i)];
        const int half = c / 2;
        declare_decode_step(specs, prefix, ch[static_cast<std::size_t>(i) + 1], c);
        if (config.enable_macr) {
            nn::declare_conv(specs, prefix + ".w1", half + 1, half, 3);
            nn::declare_conv(specs, prefix + ".w2", half, half, 3);
            nn::declare_conv(specs, prefix + ".res", half, c, 3);
        }
        nn::declare_bn(specs, prefix + ".bn", c);
    }
    nn::declare_conv(specs, "macr.head", ch[0], 3, 3);
}

ag::Var macr_decode_step(Context& ctx, const std::string& prefix, const ag::Var& prev,
                         const ag::Var& skip) {
    const Shape p = prev.shape();
    const Shape s = skip.shape();
    if (p.n != s.n || p.h * 2 != s.h || p.w * 2 != s.w) {
        throw ShapeError("decode step: prev " + p.str() + " is not half of skip " + s.str());
    }
    ag::Var up = nn::cbr(ctx, prefix + ".cnr", nn::res_up(ctx, prefix + ".up", prev, 2));
    return ag::concat_channels(up, nn::conv(ctx, prefix + ".skip", skip));
}

ag::Var mask_weight(Context& ctx, const std::string& prefix, const ag::Var& g_left,
                    const ag::Var& mask) {
    const Shape g = g_left.shape();
    if (mask.shape().c != 1 || mask.shape().n != g.n) {
        throw ShapeError("mask " + mask.shape().str() + " does not pair with " + g.str());
    }
    ag::Var m = ag::resize_bilinear(mask, g.h, g.w);
    ag::Var hidden = nn::relu(ctx, nn::conv(ctx, prefix + ".w1", ag::concat_channels(g_left, m)));
    return ag::sigmoid(nn::conv(ctx, prefix + ".w2", hidden));
}

ag::Var modulate(Context& ctx, const std::string& prefix, const ag::Var& g, const ag::Var& w) {
    const Shape gs = g.shape();
    if (gs.c % 2 != 0) {
        throw ShapeError("modulate needs an even channel count, got " + gs.str());
    }
    const int half = gs.c / 2;
    const Shape ws = w.shape();
    if (ws != Shape{gs.n, half, gs.h, gs.w}) {
        throw ShapeError("weight map " + ws.str() + " does not match right half of " + gs.str());
    }
    ag::Var right = ag::slice_channels(g, half, gs.c);
    ag::Var residual = nn::conv(ctx, prefix + ".res", right * w);
    return nn::relu(ctx, nn::bn(ctx, prefix + ".bn", residual + g));
}

ag::Var macr_head(Context& ctx, const ag::Var& finest) {
    return ag::sigmoid(nn::conv(ctx, "macr.head", finest));
}

MacrOutput macr_forward(Context& ctx, const FeaturePyramid& pyramid, const ag::Var& mask,
                        const ModelConfig& config) {
    check_pyramid(pyramid, config);
    const Shape full = pyramid.levels.front().shape();
    const Shape ms = mask.shape();
    if (ms != Shape{full.n, 1, full.h, full.w}) {
        throw ShapeError("macr mask " + ms.str() + " does not match input " + full.str());
    }
    MacrOutput out;
    out.decoder_features.resize(static_cast<std::size_t>(config.levels - 1));
    ag::Var state = pyramid.levels.back();
    for (int i = config.levels - 2; i >= 0; --i) {
        const std::string prefix = level_prefix(i);
        ag::Var g = macr_decode_step(ctx, prefix, state, pyramid.levels[static_cast<std::size_t>(i)]);
        if (config.enable_macr) {
            const int half = g.shape().c / 2;
            ag::Var w = mask_weight(ctx, prefix, ag::slice_channels(g, 0, half), mask);
            state = modulate(ctx, prefix, g, w);
        } else {
            state = nn::relu(ctx, nn::bn(ctx, prefix + ".bn", g));
        }
        out.decoder_features[static_cast<std::size_t>(i)] = state;
    }
    out.image = macr_head(ctx, state);
    return out;
}

} // namespace univ2d
