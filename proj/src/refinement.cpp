#include "univ2d/refinement.hpp"

#include "univ2d/errors.hpp"
#include "univ2d/macr.hpp"

#include <algorithm>

namespace univ2d {

namespace {

std::string refine_encoder_prefix(const ModelConfig& config) {
    return config.shared_refinement_encoder ? "enc" : "renc";
}

std::string idx(const std::string& base, int k) { return base + std::to_string(k); }

} // namespace

ag::Var composite_image(const ag::Var& restored, const ag::Var& mask, const ag::Var& raw) {
    const Shape r = restored.shape();
    const Shape m = mask.shape();
    if (raw.shape() != r || m != Shape{r.n, 1, r.h, r.w}) {
        throw ShapeError("composite: restored " + r.str() + ", mask " + m.str() + ", raw " +
                         raw.shape().str() + " are not aligned");
    }
    return restored * mask + ag::one_minus(mask) * raw;
}

int clfm_input_count(const ModelConfig& config) { return std::min(3, config.levels); }

void declare_clfm(ParamSpecList& specs, const ModelConfig& config) {
    const auto& ch = config.channels;
    const int n = clfm_input_count(config);
    const int top = ch[static_cast<std::size_t>(n - 1)];
    for (int k = 0; k < n; ++k) {
        const int out_level = k + 1;
        if (out_level >= config.levels) {
            break;
        }
        if (k < n - 1) {
            nn::declare_res_up(specs, idx("ref.clfm.up", k), top, ch[static_cast<std::size_t>(k)]);
        }
        nn::declare_res_down(specs, idx("ref.clfm.down", k), ch[static_cast<std::size_t>(k)],
                             ch[static_cast<std::size_t>(out_level)]);
    }
}

std::vector<ag::Var> clfm(Context& ctx, std::span<const ag::Var> inputs, const ModelConfig& config) {
    const int n = clfm_input_count(config);
    if (static_cast<int>(inputs.size()) != n) {
        throw ShapeError("clfm expects " + std::to_string(n) + " inputs, got " +
                         std::to_string(inputs.size()));
    }
    const Shape base = inputs.front().shape();
    for (int k = 0; k < n; ++k) {
        const Shape s = inputs[static_cast<std::size_t>(k)].shape();
        if (s.n != base.n || s.c != config.channels[static_cast<std::size_t>(k)] ||
            s.h * (1 << k) != base.h || s.w * (1 << k) != base.w) {
            throw ShapeError("clfm input " + std::to_string(k) + " has shape " + s.str());
        }
    }
    const ag::Var& top = inputs[static_cast<std::size_t>(n - 1)];
    std::vector<ag::Var> out;
    ag::Var carry;
    for (int k = 0; k < n && k + 1 < config.levels; ++k) {
        ag::Var sum;
        if (k == n - 1) {
            sum = carry + top;
        } else {
            ag::Var lifted = nn::res_up(ctx, idx("ref.clfm.up", k), top, 1 << (n - 1 - k));
            sum = inputs[static_cast<std::size_t>(k)] + lifted;
            if (k > 0) {
                sum = carry + sum;
            }
        }
        carry = nn::res_down(ctx, idx("ref.clfm.down", k), sum);
        out.push_back(carry);
    }
    return out;
}

void declare_refinement(ParamSpecList& specs, const ModelConfig& config) {
    const auto& ch = config.channels;
    if (!config.shared_refinement_encoder) {
        declare_encoder(specs, config, "renc");
    }
    for (int l = 0; l + 1 < config.levels; ++l) {
        const int c = ch[static_cast<std::size_t>(l)];
        nn::declare_conv(specs, idx("ref.fuse.l", l) + ".s", c, c, 1);
        nn::declare_conv(specs, idx("ref.fuse.l", l) + ".g", c, c, 1);
    }
    declare_clfm(specs, config);
    for (int i = config.levels - 2; i >= 0; --i) {
        const std::string prefix = idx("ref.dec.l", i);
        declare_decode_step(specs, prefix, ch[static_cast<std::size_t>(i) + 1],
                            ch[static_cast<std::size_t>(i)]);
        nn::declare_bn(specs, prefix + ".bn", ch[static_cast<std::size_t>(i)]);
    }
    nn::declare_conv(specs, "ref.head_image", ch[0], 3, 3);
    nn::declare_conv(specs, "ref.head_mask", ch[0], 1, 1);
}

RefineOutput refine_forward(Context& ctx, const ag::Var& raw, const ag::Var& restored,
                            const ag::Var& mask, std::span<const ag::Var> saliency_features,
                            std::span<const ag::Var> restoration_features,
                            const ModelConfig& config) {
    const auto stage1 = static_cast<std::size_t>(config.levels - 1);
    if (saliency_features.size() != stage1 || restoration_features.size() != stage1) {
        throw ShapeError("refinement expects " + std::to_string(stage1) +
                         " stage-1 features per branch");
    }
    RefineOutput out;
    out.composite = config.enable_smf ? composite_image(restored, mask, raw) : raw;

    FeaturePyramid pyr = encode(ctx, out.composite, config, refine_encoder_prefix(config));
    for (std::size_t l = 0; l < stage1; ++l) {
        const std::string prefix = idx("ref.fuse.l", static_cast<int>(l));
        const Shape e = pyr.levels[l].shape();
        if (saliency_features[l].shape() != e || restoration_features[l].shape() != e) {
            throw ShapeError("stage-1 feature at level " + std::to_string(l) +
                             " does not match " + e.str());
        }
        pyr.levels[l] = pyr.levels[l] + nn::conv(ctx, prefix + ".s", saliency_features[l]) +
                        nn::conv(ctx, prefix + ".g", restoration_features[l]);
    }

    const int n = clfm_input_count(config);
    std::vector<ag::Var> modulated =
        clfm(ctx, std::span<const ag::Var>(pyr.levels.data(), static_cast<std::size_t>(n)), config);
    // modulated[k] sits at level k + 1.
    auto inject = [&](const ag::Var& x, int level) {
        const int k = level - 1;
        if (k >= 0 && k < static_cast<int>(modulated.size())) {
            return x + modulated[static_cast<std::size_t>(k)];
        }
        return x;
    };

    ag::Var state = inject(pyr.levels.back(), config.levels - 1);
    for (int i = config.levels - 2; i >= 0; --i) {
        const std::string prefix = idx("ref.dec.l", i);
        ag::Var g = macr_decode_step(ctx, prefix, state, pyr.levels[static_cast<std::size_t>(i)]);
        state = inject(nn::relu(ctx, nn::bn(ctx, prefix + ".bn", g)), i);
    }
    out.image = ag::sigmoid(nn::conv(ctx, "ref.head_image", state));
    out.mask = ag::sigmoid(nn::conv(ctx, "ref.head_mask", state));
    return out;
}

} // namespace univ2d
