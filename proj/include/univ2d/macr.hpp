#pragma once

// Mask-aware restoration decoder.
//
// At level i the decoder state G_i has channels[i] channels: the first half
// comes from upsampling the previous state, the second half is a 1x1
// projection of the encoder skip feature. The saliency mask then gates the
// right half of G_i before a residual merge.

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/nn.hpp"

#include <string>
#include <vector>

namespace univ2d {

struct MacrOutput {
    /// [N,3,H,W], values in (0,1).
    ag::Var image;
    /// Refined features, indexed by pyramid level 0..levels-2.
    std::vector<ag::Var> decoder_features;
};

/// Upsample/merge block shared with the refinement decoder:
/// `name.up` (ResUp prev -> c/2), `name.cnr` (3x3 CBR c/2 -> c/2),
/// `name.skip` (1x1 c -> c/2).
void declare_decode_step(ParamSpecList& specs, const std::string& name, int prev_channels,
                         int channels);
void declare_macr(ParamSpecList& specs, const ModelConfig& config);

/// G = cat(CNR(ResUp(prev)), conv1x1(skip)). `prev` must be at half the
/// skip's resolution.
ag::Var macr_decode_step(Context& ctx, const std::string& prefix, const ag::Var& prev,
                         const ag::Var& skip);

/// W = sigmoid(conv3x3(ReLU(conv3x3(cat(g_left, mask))))). The mask is
/// bilinearly resized to g_left's resolution if needed.
ag::Var mask_weight(Context& ctx, const std::string& prefix, const ag::Var& g_left,
                    const ag::Var& mask);

/// R = conv3x3(G^r * W) with C output channels; returns ReLU(BN(R + G)).
ag::Var modulate(Context& ctx, const std::string& prefix, const ag::Var& g, const ag::Var& w);

ag::Var macr_head(Context& ctx, const ag::Var& finest);

/// `mask` is [N,1,H,W] at input resolution.
MacrOutput macr_forward(Context& ctx, const FeaturePyramid& pyramid, const ag::Var& mask,
                        const ModelConfig& config);

} // namespace univ2d
