#pragma once

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace univ2d {

/// restored * mask + (1 - mask) * raw, mask broadcast over channels.
ag::Var composite_image(const ag::Var& restored, const ag::Var& mask, const ag::Var& raw);

/// Number of pyramid levels the cross-level modulation consumes: min(3, levels).
int clfm_input_count(const ModelConfig& config);

void declare_clfm(ParamSpecList& specs, const ModelConfig& config);

/// Cross-level modulation over the finest n = clfm_input_count() levels
/// F_0..F_{n-1} (top = F_{n-1}):
///   D_0 = ResDown(F_0 + ResUp(top))
///   D_k = ResDown(D_{k-1} + ResUp(top) + F_k)      0 < k < n-1
///   D_{n-1} = ResDown(D_{n-2} + top)
/// D_k lives at level k+1 with channels[k+1]; the last one is produced only
/// when level n exists. Every ResUp has its own parameters.
std::vector<ag::Var> clfm(Context& ctx, std::span<const ag::Var> inputs, const ModelConfig& config);

void declare_refinement(ParamSpecList& specs, const ModelConfig& config);

struct RefineOutput {
    ag::Var composite;
    ag::Var image;
    ag::Var mask;
};

/// Stage-1 features are indexed by level 0..levels-2 and are merged into the
/// refinement encoder's pyramid through 1x1 projections before modulation.
/// With enable_smf off the raw input replaces the composite.
RefineOutput refine_forward(Context& ctx, const ag::Var& raw, const ag::Var& restored,
                            const ag::Var& mask, std::span<const ag::Var> saliency_features,
                            std::span<const ag::Var> restoration_features,
                            const ModelConfig& config);

} // namespace univ2d
