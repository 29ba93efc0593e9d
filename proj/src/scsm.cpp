#include "univ2d/scsm.hpp"

#include "univ2d/errors.hpp"

namespace univ2d {

namespace {

std::string level_prefix(int i) { return "scsm.l" + std::to_string(i); }

} // namespace

void declare_scsm_level(ParamSpecList& specs, const std::string& prefix, int decoder_channels,
                        int skip_channels, bool enable_scsm) {
    const int c = skip_channels;
    nn::declare_cbr(specs, prefix + ".fuse.main", decoder_channels + c, c, 3);
    nn::declare_conv(specs, prefix + ".fuse.skip", decoder_channels + c, c, 1);
    if (!enable_scsm) {
        nn::declare_conv(specs, prefix + ".head", c, 1, 1);
        return;
    }
    nn::declare_conv(specs, prefix + ".coarse", c, 1, 1);
    nn::declare_conv(specs, prefix + ".phi_q", c, c, 1);
    nn::declare_conv(specs, prefix + ".phi_k", c, c, 1);
    nn::declare_conv(specs, prefix + ".phi_v", c, c, 1);
    nn::declare_conv(specs, prefix + ".affinity", 2 * c, 1, 1);
    nn::declare_conv(specs, prefix + ".out", c + 1, 1, 1);
}

void declare_scsm(ParamSpecList& specs, const ModelConfig& config) {
    const auto& ch = config.channels;
    for (int i = config.levels - 2; i >= 0; --i) {
        declare_scsm_level(specs, level_prefix(i), ch[static_cast<std::size_t>(i) + 1],
                           ch[static_cast<std::size_t>(i)], config.enable_scsm);
    }
}

ag::Var fuse_and_upsample(Context& ctx, const std::string& prefix, const ag::Var& decoder_feat,
                          const ag::Var& skip_feat) {
    const Shape d = decoder_feat.shape();
    const Shape s = skip_feat.shape();
    ag::Var up;
    if (d.n != s.n) {
        throw ShapeError("fuse: batch mismatch " + d.str() + " vs " + s.str());
    }
    if (d.h == s.h && d.w == s.w) {
        up = decoder_feat;
    } else if (d.h * 2 == s.h && d.w * 2 == s.w) {
        up = ag::resize_bilinear(decoder_feat, s.h, s.w);
    } else {
        throw ShapeError("fuse: decoder " + d.str() + " cannot be aligned with skip " + s.str());
    }
    ag::Var cat = ag::concat_channels(up, skip_feat);
    return nn::cbr(ctx, prefix + ".fuse.main", cat) + nn::conv(ctx, prefix + ".fuse.skip", cat);
}

ag::Var coarse_weight_map(Context& ctx, const std::string& prefix, const ag::Var& x_in) {
    return ag::sigmoid(nn::conv(ctx, prefix + ".coarse", x_in));
}

ag::Var global_salient_descriptor(const ag::Var& x_in, const ag::Var& weights) {
    const Shape xs = x_in.shape();
    const Shape ws = weights.shape();
    if (ws.c != 1 || ws.n != xs.n || ws.h != xs.h || ws.w != xs.w) {
        throw ShapeError("descriptor weights " + ws.str() + " do not match features " + xs.str());
    }
    return ag::sum_spatial(x_in * weights) / ag::sum_spatial(weights);
}

ag::Var affinity_map(Context& ctx, const std::string& prefix, const ag::Var& x_in,
                     const ag::Var& descriptor) {
    ag::Var query = nn::conv(ctx, prefix + ".phi_q", x_in);
    ag::Var key = ag::expand(nn::conv(ctx, prefix + ".phi_k", descriptor), query.shape());
    ag::Var joint = ag::tanh(ag::concat_channels(key, query));
    return ag::sigmoid(nn::conv(ctx, prefix + ".affinity", joint));
}

ag::Var initial_saliency(Context& ctx, const std::string& prefix, const ag::Var& affinity,
                         const ag::Var& x_in, int out_h, int out_w) {
    ag::Var value = nn::conv(ctx, prefix + ".phi_v", x_in);
    ag::Var mask = ag::sigmoid(nn::conv(ctx, prefix + ".out", ag::concat_channels(affinity, value)));
    return ag::resize_bilinear(mask, out_h, out_w);
}

ScsmOutput scsm_forward(Context& ctx, const FeaturePyramid& pyramid, const ModelConfig& config) {
    check_pyramid(pyramid, config);
    const int levels = config.levels;
    ScsmOutput out;
    out.decoder_features.resize(static_cast<std::size_t>(levels - 1));
    out.level_masks.resize(static_cast<std::size_t>(levels - 1));

    ag::Var decoder = pyramid.levels.back();
    for (int i = levels - 2; i >= 0; --i) {
        const std::string prefix = level_prefix(i);
        const ag::Var& skip = pyramid.levels[static_cast<std::size_t>(i)];
        ag::Var x_in = fuse_and_upsample(ctx, prefix, decoder, skip);
        const Shape s = x_in.shape();
        ag::Var mask;
        if (config.enable_scsm) {
            ag::Var weights = coarse_weight_map(ctx, prefix, x_in);
            ag::Var descriptor = global_salient_descriptor(x_in, weights);
            ag::Var affinity = affinity_map(ctx, prefix, x_in, descriptor);
            mask = initial_saliency(ctx, prefix, affinity, x_in, s.h, s.w);
        } else {
            mask = ag::sigmoid(nn::conv(ctx, prefix + ".head", x_in));
        }
        out.decoder_features[static_cast<std::size_t>(i)] = x_in;
        out.level_masks[static_cast<std::size_t>(i)] = mask;
        decoder = x_in + x_in * mask;
    }
    const Shape full = pyramid.levels.front().shape();
    out.mask = ag::resize_bilinear(out.level_masks.front(), full.h, full.w);
    return out;
}

} // namespace univ2d
