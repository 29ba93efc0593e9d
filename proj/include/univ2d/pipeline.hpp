#pragma once

#include "univ2d/config.hpp"
#include "univ2d/data.hpp"
#include "univ2d/losses.hpp"
#include "univ2d/metrics.hpp"
#include "univ2d/model.hpp"
#include "univ2d/params.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace univ2d {

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 32;
    int patch = 256;
    int epochs = 150;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int log_every = 10;
    /// Empty disables checkpoint writing.
    std::string checkpoint_dir;
    bool clip_gradients = true;
    double clip_norm = 5.0;
    /// Random crop and flip; when off, samples are used whole.
    bool augment = true;
};

/// Throws ConfigError on lr <= 0 (lr == 0 is allowed for probes), batch < 1
/// or a patch not divisible by the model's spatial divisor.
void validate_train_config(const TrainConfig& tc, const ModelConfig& mc);

TrainConfig train_config_from(const KeyValueDocument& doc, TrainConfig base = {});

/// Reads UNIV2D_SEED and, if set, replaces config.seed. Throws ConfigError on
/// a malformed value.
ModelConfig apply_seed_override(ModelConfig config);

struct TrainState {
    std::int64_t step = 0;
    ParamStore params;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    /// Mean of every step's breakdown so far.
    LossBreakdown running;

    static TrainState fresh(const ModelConfig& config);
};

struct Batch {
    ag::Var input;
    ag::Var gt_image;
    ag::Var gt_mask;
};

Batch make_batch(const std::vector<Sample>& samples);

struct StepContext {
    ModelConfig model;
    TrainConfig train;
    LossWeights weights;
    const PerceptualExtractor* extractor = nullptr;
};

/// One Adam update on the mean loss of `batch`. Returns the breakdown
/// evaluated before the update. Throws NonFiniteLossError if the total loss
/// is not finite; the state is left untouched in that case.
LossBreakdown train_step(TrainState& state, const Batch& batch, const StepContext& ctx);

/// Global L2 norm of all parameter gradients.
double gradient_norm(const ParamStore& params);

struct CurveRow {
    std::int64_t step = 0;
    int epoch = 0;
    LossBreakdown loss;
};

std::string curve_csv_header();
std::string curve_csv_line(const CurveRow& row);

struct Checkpoint {
    ModelConfig model;
    LossWeights weights;
    TrainConfig train;
    TrainState state;
    /// Number of completed epochs.
    int epoch = 0;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

struct TrainLoopOptions {
    /// Appended to (created with a header if absent).
    std::string curve_path;
    /// Resume from this checkpoint instead of a fresh initialization.
    std::optional<Checkpoint> resume;
    /// Called after every step.
    std::function<void(const CurveRow&)> on_step;
};

struct TrainResult {
    TrainState state;
    std::vector<CurveRow> curve;
};

/// Runs epochs x ceil(n / batch) steps. Epoch e visits the samples in an order
/// derived from (seed, e) only, so a resumed run continues identically.
/// Writes <checkpoint_dir>/epoch_<e>.ckpt and latest.ckpt after every epoch.
TrainResult train_loop(const std::vector<Sample>& dataset, const ModelConfig& model,
                       const TrainConfig& train, const LossWeights& weights,
                       const PerceptualExtractor& extractor, const TrainLoopOptions& options = {});

struct Prediction {
    Tensor restored;  // [1,3,H,W]
    Tensor mask;      // [1,1,H,W]
};

using Predictor = std::function<Prediction(const Sample&)>;

/// Image metrics on the restored output against gt_image, saliency metrics on
/// the mask against gt_mask. One row per sample, in dataset order.
MetricReport evaluate(const std::vector<Sample>& dataset, const Predictor& predictor);

/// Inference-mode forward pass returning the refined outputs.
Prediction predict(ParamStore& params, const ModelConfig& config, const Image& image);
MetricReport evaluate(const std::vector<Sample>& dataset, ParamStore& params,
                      const ModelConfig& config);

struct InferOutput {
    std::string restored_path;
    std::string mask_path;
};

/// Writes <out_dir>/<stem>_restored.png (RGB) and <stem>_mask.png (gray).
InferOutput infer(const std::string& image_path, const std::string& checkpoint_path,
                  const std::string& out_dir);

struct OverfitOptions {
    int samples = 4;
    int size = 64;
    int steps = 500;
    double lr = 5e-3;
    std::uint64_t data_seed = 2024;
};

struct OverfitResult {
    TrainResult training;
    MetricReport report;
};

/// Trains full-batch on a fixed synthetic set, then evaluates on it.
OverfitResult overfit_protocol(const ModelConfig& model, const OverfitOptions& options);

} // namespace univ2d
