#pragma once

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"
#include "univ2d/nn.hpp"
#include "univ2d/params.hpp"

namespace univ2d {

struct ForwardOutput {
    ag::Var restored_initial;  // I'
    ag::Var mask_initial;      // M'
    ag::Var restored_final;    // I''
    ag::Var mask_final;        // M''
    ag::Var composite;
};

/// encode -> saliency branch -> restoration branch -> composite -> refinement.
/// `images` is [N,3,H,W]. With enable_smf off the restoration branch sees a
/// constant 0.5 mask and the refinement stage sees the raw input.
ForwardOutput forward_full(Context& ctx, const ag::Var& images, const ModelConfig& config);

} // namespace univ2d
