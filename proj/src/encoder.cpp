#include "univ2d/encoder.hpp"

#include "univ2d/errors.hpp"

namespace univ2d {

namespace {

std::string level_name(const std::string& prefix, int l) {
    return prefix + ".l" + std::to_string(l);
}

} // namespace

void check_input_dims(const Shape& input, const ModelConfig& config) {
    const int d = config.spatial_divisor();
    if (input.c != 3) {
        throw ShapeError("encoder expects 3 input channels, got " + input.str());
    }
    if (input.h < 16 || input.w < 16 || input.h % d != 0 || input.w % d != 0) {
        throw ShapeError("input " + input.str() + " must be >= 16 and divisible by " +
                         std::to_string(d));
    }
}

void declare_encoder(ParamSpecList& specs, const ModelConfig& config, const std::string& prefix) {
    const auto& ch = config.channels;
    nn::declare_conv(specs, prefix + ".stem", 3, ch[0], 3);
    for (int l = 1; l < config.levels; ++l) {
        const std::string name = level_name(prefix, l);
        nn::declare_conv(specs, name + ".down", ch[l - 1], ch[l], 3);
        nn::declare_res_block(specs, name + ".res", ch[l]);
    }
}

FeaturePyramid encode(Context& ctx, const ag::Var& images, const ModelConfig& config,
                      const std::string& prefix) {
    check_input_dims(images.shape(), config);
    FeaturePyramid out;
    ag::Var x = nn::conv(ctx, prefix + ".stem", images);
    out.levels.push_back(x);
    for (int l = 1; l < config.levels; ++l) {
        const std::string name = level_name(prefix, l);
        x = nn::conv(ctx, name + ".down", x, 2);
        x = nn::res_block(ctx, name + ".res", x);
        out.levels.push_back(x);
    }
    return out;
}

void check_pyramid(const FeaturePyramid& pyramid, const ModelConfig& config) {
    if (static_cast<int>(pyramid.levels.size()) != config.levels) {
        throw ShapeError("pyramid has " + std::to_string(pyramid.levels.size()) +
                         " levels, config expects " + std::to_string(config.levels));
    }
    const Shape base = pyramid.levels.front().shape();
    for (int l = 0; l < config.levels; ++l) {
        const Shape s = pyramid.levels[static_cast<std::size_t>(l)].shape();
        if (s.c != config.channels[static_cast<std::size_t>(l)] || s.h * (1 << l) != base.h ||
            s.w * (1 << l) != base.w) {
            throw ShapeError("pyramid level " + std::to_string(l) + " has shape " + s.str());
        }
    }
}

} // namespace univ2d
