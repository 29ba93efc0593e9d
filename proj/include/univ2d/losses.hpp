#pragma once

#include "univ2d/archive.hpp"
#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace univ2d {

inline constexpr double kBceClampEps = 1e-7;
inline constexpr double kIouSmoothing = 1.0;

enum class Reduction { mean, sum };

/// Pixelwise binary cross-entropy with the prediction clamped to
/// [1e-7, 1 - 1e-7].
ag::Var bce_loss(const ag::Var& pred, const ag::Var& gt, Reduction reduction = Reduction::mean);

/// 1 - (sum pg + 1) / (sum p + sum g - sum pg + 1), per sample, averaged over
/// the batch.
ag::Var iou_loss(const ag::Var& pred, const ag::Var& gt);

/// bce + iou.
ag::Var mask_loss_final(const ag::Var& pred, const ag::Var& gt);

/// mean |pred - gt| + (1 - SSIM(pred, gt)).
ag::Var content_loss(const ag::Var& pred, const ag::Var& gt);

/// Frozen convolutional feature stack. Each stage is a 3x3 convolution with
/// the given stride followed by ReLU; the activation after every stage is a
/// tap.
class PerceptualExtractor {
public:
    struct Stage {
        std::string name;
        Tensor weight;  // [Cout, Cin, 3, 3]
        Tensor bias;    // [1, Cout, 1, 1]
        int stride = 1;
    };

    static constexpr std::uint64_t kDefaultSeed = 0x9e1a5eedULL;

    /// Widths 16/32/64, strides 1/2/2, fan-in scaled uniform weights.
    static PerceptualExtractor seeded(std::uint64_t seed = kDefaultSeed);
    /// Same layout with every weight and bias zero.
    static PerceptualExtractor zeros();

    /// Archive layout: meta {"kind": "perceptual_extractor", "taps": [names],
    /// "strides": [ints]}; arrays "<tap>.w" and "<tap>.b".
    static PerceptualExtractor load(const std::string& path);
    void save(const std::string& path) const;

    explicit PerceptualExtractor(std::vector<Stage> stages);

    [[nodiscard]] const std::vector<Stage>& stages() const { return stages_; }
    [[nodiscard]] std::vector<ag::Var> taps(const ag::Var& images) const;

private:
    std::vector<Stage> stages_;
    std::vector<ag::Var> weights_;
    std::vector<ag::Var> biases_;
};

/// Sum over taps of mean |phi_k(pred) - phi_k(gt)|; gt features are constants.
ag::Var perceptual_loss(const ag::Var& pred, const ag::Var& gt,
                        const PerceptualExtractor& extractor);

struct LossBreakdown {
    double mask_pre = 0.0;
    double mask_fin = 0.0;
    double content = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
};

/// Fills `total` = alpha * (mask_pre + mask_fin) + content + perceptual.
LossBreakdown total_loss(LossBreakdown terms, const LossWeights& weights);

struct LossTerms {
    ag::Var mask_pre;
    ag::Var mask_fin;
    ag::Var content;
    ag::Var perceptual;
    ag::Var total;

    [[nodiscard]] LossBreakdown breakdown() const;
};

struct LossTargets {
    ag::Var gt_image;
    ag::Var gt_mask;
};

/// Preliminary mask: BCE of M' against the gt mask. Final mask: BCE + IoU
/// of M''. Content and perceptual terms compare I'' to the gt image.
LossTerms compute_losses(const ag::Var& mask_initial, const ag::Var& restored_final,
                         const ag::Var& mask_final, const LossTargets& targets,
                         const PerceptualExtractor& extractor, const LossWeights& weights);

} // namespace univ2d
