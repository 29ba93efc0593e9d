#pragma once

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"
#include "univ2d/nn.hpp"

#include <string>
#include <vector>

namespace univ2d {

/// Multi-scale features, finest first. Level l is [N, channels[l], H/2^l, W/2^l].
struct FeaturePyramid {
    std::vector<ag::Var> levels;
};

/// Throws ShapeError unless H and W are >= 16 and divisible by 2^(levels-1).
void check_input_dims(const Shape& input, const ModelConfig& config);

/// Stem: one 3x3 convolution to channels[0] at full resolution. Level l >= 1:
/// stride-2 3x3 convolution then a residual block.
void declare_encoder(ParamSpecList& specs, const ModelConfig& config, const std::string& prefix);

FeaturePyramid encode(Context& ctx, const ag::Var& images, const ModelConfig& config,
                      const std::string& prefix = "enc");

/// Throws ShapeError if the pyramid does not match the config's schedule.
void check_pyramid(const FeaturePyramid& pyramid, const ModelConfig& config);

} // namespace univ2d
