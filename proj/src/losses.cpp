#include "univ2d/losses.hpp"

#include "univ2d/errors.hpp"
#include "univ2d/metrics.hpp"
#include "univ2d/nn.hpp"
#include "univ2d/params.hpp"

#include <array>

namespace univ2d {

namespace {

void require_same_shape(const ag::Var& a, const ag::Var& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
    }
}

struct StageLayout {
    const char* name;
    int cin;
    int cout;
    int stride;
};

constexpr std::array<StageLayout, 3> kDefaultLayout{{
    {"s1", 3, 16, 1},
    {"s2", 16, 32, 2},
    {"s3", 32, 64, 2},
}};

} // namespace

ag::Var bce_loss(const ag::Var& pred, const ag::Var& gt, Reduction reduction) {
    require_same_shape(pred, gt, "bce_loss");
    ag::Var p = ag::clamp(pred, kBceClampEps, 1.0 - kBceClampEps);
    ag::Var ll = gt * ag::log(p) + ag::one_minus(gt) * ag::log(ag::one_minus(p));
    ag::Var total = ag::scale(ag::sum_all(ll), -1.0);
    if (reduction == Reduction::sum) {
        return total;
    }
    return ag::scale(total, 1.0 / static_cast<double>(pred.value().numel()));
}

ag::Var iou_loss(const ag::Var& pred, const ag::Var& gt) {
    require_same_shape(pred, gt, "iou_loss");
    ag::Var inter = ag::sum_per_sample(pred * gt);
    ag::Var uni = ag::sum_per_sample(pred) + ag::sum_per_sample(gt) - inter;
    ag::Var ratio = ag::add_scalar(inter, kIouSmoothing) / ag::add_scalar(uni, kIouSmoothing);
    return ag::one_minus(ag::mean_all(ratio));
}

ag::Var mask_loss_final(const ag::Var& pred, const ag::Var& gt) {
    return bce_loss(pred, gt) + iou_loss(pred, gt);
}

ag::Var content_loss(const ag::Var& pred, const ag::Var& gt) {
    require_same_shape(pred, gt, "content_loss");
    return ag::mean_all(ag::abs(pred - gt)) + ag::one_minus(ssim_var(pred, gt));
}

PerceptualExtractor::PerceptualExtractor(std::vector<Stage> stages) : stages_(std::move(stages)) {
    if (stages_.size() != 3) {
        throw ConfigError("perceptual extractor needs exactly 3 stages, got " +
                          std::to_string(stages_.size()));
    }
    int cin = 3;
    for (const auto& st : stages_) {
        const Shape w = st.weight.shape();
        if (w.c != cin || w.h != w.w || w.h % 2 == 0 || st.bias.shape() != Shape{1, w.n, 1, 1} ||
            st.stride < 1) {
            throw ShapeError("perceptual stage " + st.name + " has weight " + w.str() +
                             " and bias " + st.bias.shape().str());
        }
        cin = w.n;
        weights_.push_back(ag::Var::constant(st.weight));
        biases_.push_back(ag::Var::constant(st.bias));
    }
}

PerceptualExtractor PerceptualExtractor::seeded(std::uint64_t seed) {
    ParamSpecList specs;
    for (const auto& l : kDefaultLayout) {
        nn::declare_conv(specs, l.name, l.cin, l.cout, 3);
    }
    const ParamStore store = init_params(specs, seed);
    std::vector<Stage> stages;
    for (const auto& l : kDefaultLayout) {
        const std::string n = l.name;
        stages.push_back({n, store.param(n + ".w").value(), store.param(n + ".b").value(), l.stride});
    }
    return PerceptualExtractor(std::move(stages));
}

PerceptualExtractor PerceptualExtractor::zeros() {
    std::vector<Stage> stages;
    for (const auto& l : kDefaultLayout) {
        stages.push_back({l.name, Tensor(Shape{l.cout, l.cin, 3, 3}),
                          Tensor(Shape{1, l.cout, 1, 1}), l.stride});
    }
    return PerceptualExtractor(std::move(stages));
}

PerceptualExtractor PerceptualExtractor::load(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (ar.meta.value("kind", std::string()) != "perceptual_extractor" ||
        !ar.meta.contains("taps") || !ar.meta.contains("strides")) {
        throw ArchiveError(path + " is not a perceptual extractor archive");
    }
    const auto taps = ar.meta.at("taps").get<std::vector<std::string>>();
    const auto strides = ar.meta.at("strides").get<std::vector<int>>();
    if (taps.size() != strides.size()) {
        throw ArchiveError(path + ": taps and strides differ in length");
    }
    std::vector<Stage> stages;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const auto w = ar.arrays.find(taps[i] + ".w");
        const auto b = ar.arrays.find(taps[i] + ".b");
        if (w == ar.arrays.end() || b == ar.arrays.end()) {
            throw ArchiveError(path + ": missing arrays for tap " + taps[i]);
        }
        stages.push_back({taps[i], w->second, b->second, strides[i]});
    }
    return PerceptualExtractor(std::move(stages));
}

void PerceptualExtractor::save(const std::string& path) const {
    Archive ar;
    ar.meta["kind"] = "perceptual_extractor";
    std::vector<std::string> taps;
    std::vector<int> strides;
    for (const auto& st : stages_) {
        taps.push_back(st.name);
        strides.push_back(st.stride);
        ar.arrays[st.name + ".w"] = st.weight;
        ar.arrays[st.name + ".b"] = st.bias;
    }
    ar.meta["taps"] = taps;
    ar.meta["strides"] = strides;
    ar.save(path);
}

std::vector<ag::Var> PerceptualExtractor::taps(const ag::Var& images) const {
    std::vector<ag::Var> out;
    ag::Var x = images;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const int k = stages_[i].weight.shape().h;
        x = ag::relu(ag::conv2d(x, weights_[i], biases_[i], stages_[i].stride, k / 2));
        out.push_back(x);
    }
    return out;
}

ag::Var perceptual_loss(const ag::Var& pred, const ag::Var& gt,
                        const PerceptualExtractor& extractor) {
    require_same_shape(pred, gt, "perceptual_loss");
    const std::vector<ag::Var> fp = extractor.taps(pred);
    const std::vector<ag::Var> fg = extractor.taps(ag::Var::constant(gt.value()));
    ag::Var total = ag::mean_all(ag::abs(fp[0] - fg[0]));
    for (std::size_t k = 1; k < fp.size(); ++k) {
        total = total + ag::mean_all(ag::abs(fp[k] - fg[k]));
    }
    return total;
}

LossBreakdown total_loss(LossBreakdown terms, const LossWeights& weights) {
    terms.total = weights.alpha * (terms.mask_pre + terms.mask_fin) + terms.content +
                  terms.perceptual;
    return terms;
}

LossBreakdown LossTerms::breakdown() const {
    LossBreakdown b;
    b.mask_pre = mask_pre.value()[0];
    b.mask_fin = mask_fin.value()[0];
    b.content = content.value()[0];
    b.perceptual = perceptual.value()[0];
    b.total = total.value()[0];
    return b;
}

LossTerms compute_losses(const ag::Var& mask_initial, const ag::Var& restored_final,
                         const ag::Var& mask_final, const LossTargets& targets,
                         const PerceptualExtractor& extractor, const LossWeights& weights) {
    LossTerms t;
    t.mask_pre = bce_loss(mask_initial, targets.gt_mask);
    t.mask_fin = mask_loss_final(mask_final, targets.gt_mask);
    t.content = content_loss(restored_final, targets.gt_image);
    t.perceptual = perceptual_loss(restored_final, targets.gt_image, extractor);
    t.total = ag::scale(t.mask_pre + t.mask_fin, weights.alpha) + t.content + t.perceptual;
    return t;
}

} // namespace univ2d
