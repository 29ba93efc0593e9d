#pragma once

// Self-calibrated saliency decoder branch.
//
// Per decoder level i (coarsest to finest):
//   X_in = fuse(S_{i+1}, F_i)                         fused feature
//   M_k  = sigmoid(conv1x1(X_in))                     coarse weight map
//   X_k  = sum(M_k * X_in) / sum(M_k)                 global descriptor [C]
//   S    = sigmoid(conv1x1(tanh(cat(phi_k(X_k), phi_q(X_in)))))
//   M'   = sigmoid(conv1x1(cat(S, phi_v(X_in))))
// The next level's decoder feature is X_in * (1 + M'), so every level's
// calibration shapes the finer levels.

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/nn.hpp"

#include <string>
#include <vector>

namespace univ2d {

struct ScsmOutput {
    /// [N,1,H,W] at input resolution, values in (0,1).
    ag::Var mask;
    /// Fused features X_in, indexed by pyramid level 0..levels-2.
    std::vector<ag::Var> decoder_features;
    /// Per-level masks at each level's resolution, same indexing.
    std::vector<ag::Var> level_masks;
};

void declare_scsm_level(ParamSpecList& specs, const std::string& prefix, int decoder_channels,
                        int skip_channels, bool enable_scsm);
void declare_scsm(ParamSpecList& specs, const ModelConfig& config);

/// Concatenates the (bilinearly x2-upsampled, if at half resolution) decoder
/// feature with the skip feature, then a residual block: 3x3 CBR plus 1x1
/// projection, both to the skip's channel count.
ag::Var fuse_and_upsample(Context& ctx, const std::string& prefix, const ag::Var& decoder_feat,
                          const ag::Var& skip_feat);

ag::Var coarse_weight_map(Context& ctx, const std::string& prefix, const ag::Var& x_in);

/// Attention-weighted spatial pooling: [N,C,H,W] x [N,1,H,W] -> [N,C,1,1].
ag::Var global_salient_descriptor(const ag::Var& x_in, const ag::Var& weights);

/// The global descriptor is broadcast over space before concatenation.
ag::Var affinity_map(Context& ctx, const std::string& prefix, const ag::Var& x_in,
                     const ag::Var& descriptor);

/// Mask from affinity and the phi_v projection, bilinearly resized to
/// (out_h, out_w).
ag::Var initial_saliency(Context& ctx, const std::string& prefix, const ag::Var& affinity,
                         const ag::Var& x_in, int out_h, int out_w);

ScsmOutput scsm_forward(Context& ctx, const FeaturePyramid& pyramid, const ModelConfig& config);

} // namespace univ2d
