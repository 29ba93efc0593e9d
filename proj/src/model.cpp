#include "univ2d/model.hpp"

#include "univ2d/encoder.hpp"
#include "univ2d/macr.hpp"
#include "univ2d/refinement.hpp"
#include "univ2d/scsm.hpp"

namespace univ2d {

ParamSpecList model_param_specs(const ModelConfig& config) {
    const ModelConfig cfg = validate_config(config);
    ParamSpecList specs;
    declare_encoder(specs, cfg, "enc");
    declare_scsm(specs, cfg);
    declare_macr(specs, cfg);
    declare_refinement(specs, cfg);
    return specs;
}

ForwardOutput forward_full(Context& ctx, const ag::Var& images, const ModelConfig& config) {
    FeaturePyramid pyramid = encode(ctx, images, config, "enc");
    ScsmOutput saliency = scsm_forward(ctx, pyramid, config);

    ag::Var guide = saliency.mask;
    if (!config.enable_smf) {
        guide = ag::Var::constant(Tensor(saliency.mask.shape(), 0.5));
    }
    MacrOutput restoration = macr_forward(ctx, pyramid, guide, config);

    RefineOutput refined =
        refine_forward(ctx, images, restoration.image, saliency.mask, saliency.decoder_features,
                       restoration.decoder_features, config);

    ForwardOutput out;
    out.restored_initial = restoration.image;
    out.mask_initial = saliency.mask;
    out.restored_final = refined.image;
    out.mask_final = refined.mask;
    out.composite = refined.composite;
    return out;
}

} // namespace univ2d
