#include "univ2d/pipeline.hpp"

#include "univ2d/archive.hpp"
#include "univ2d/encoder.hpp"
#include "univ2d/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace univ2d {

namespace fs = std::filesystem;

void validate_train_config(const TrainConfig& tc, const ModelConfig& mc) {
    if (!(tc.lr >= 0.0) || !std::isfinite(tc.lr)) {
        throw ConfigError("lr must be finite and non-negative");
    }
    if (tc.batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (tc.epochs < 0) {
        throw ConfigError("epochs must be >= 0");
    }
    if (tc.patch < kMinImageSide || tc.patch % mc.spatial_divisor() != 0) {
        throw ConfigError("patch " + std::to_string(tc.patch) + " must be >= 16 and divisible by " +
                          std::to_string(mc.spatial_divisor()));
    }
    if (!(tc.adam_beta1 >= 0.0 && tc.adam_beta1 < 1.0) ||
        !(tc.adam_beta2 >= 0.0 && tc.adam_beta2 < 1.0) || !(tc.adam_eps > 0.0)) {
        throw ConfigError("Adam betas must lie in [0, 1) and eps must be positive");
    }
    if (tc.clip_gradients && !(tc.clip_norm > 0.0)) {
        throw ConfigError("clip_norm must be positive");
    }
}

TrainConfig train_config_from(const KeyValueDocument& doc, TrainConfig base) {
    if (auto v = doc.get_real("lr")) base.lr = *v;
    if (auto v = doc.get_int("batch_size")) base.batch_size = static_cast<int>(*v);
    if (auto v = doc.get_int("patch")) base.patch = static_cast<int>(*v);
    if (auto v = doc.get_int("epochs")) base.epochs = static_cast<int>(*v);
    if (auto v = doc.get_real("adam_beta1")) base.adam_beta1 = *v;
    if (auto v = doc.get_real("adam_beta2")) base.adam_beta2 = *v;
    if (auto v = doc.get_real("adam_eps")) base.adam_eps = *v;
    if (auto v = doc.get_int("log_every")) base.log_every = static_cast<int>(*v);
    if (auto v = doc.get_string("checkpoint_dir")) base.checkpoint_dir = *v;
    if (auto v = doc.get_bool("clip_gradients")) base.clip_gradients = *v;
    if (auto v = doc.get_real("clip_norm")) base.clip_norm = *v;
    if (auto v = doc.get_bool("augment")) base.augment = *v;
    return base;
}

ModelConfig apply_seed_override(ModelConfig config) {
    const char* env = std::getenv("UNIV2D_SEED");
    if (env == nullptr || *env == '\0') {
        return config;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
        throw ConfigError(std::string("UNIV2D_SEED is not an unsigned integer: ") + env);
    }
    config.seed = v;
    return config;
}

TrainState TrainState::fresh(const ModelConfig& config) {
    TrainState s;
    s.params = init_params(config);
    for (const auto& [name, p] : s.params.params()) {
        s.adam_m.emplace(name, Tensor(p.shape()));
        s.adam_v.emplace(name, Tensor(p.shape()));
    }
    return s;
}

Batch make_batch(const std::vector<Sample>& samples) {
    if (samples.empty()) {
        throw ConfigError("empty batch");
    }
    std::vector<Tensor> in;
    std::vector<Tensor> gi;
    std::vector<Tensor> gm;
    for (const auto& s : samples) {
        in.push_back(s.input.tensor());
        gi.push_back(s.gt_image.tensor());
        gm.push_back(s.gt_mask.tensor());
    }
    return {ag::Var::constant(Tensor::stack(in)), ag::Var::constant(Tensor::stack(gi)),
            ag::Var::constant(Tensor::stack(gm))};
}

double gradient_norm(const ParamStore& params) {
    double ss = 0.0;
    for (const auto& [_, p] : params.params()) {
        if (!p.has_grad()) {
            continue;
        }
        for (double g : p.grad().values()) {
            ss += g * g;
        }
    }
    return std::sqrt(ss);
}

LossBreakdown train_step(TrainState& state, const Batch& batch, const StepContext& sc) {
    if (sc.extractor == nullptr) {
        throw ConfigError("train_step needs a perceptual extractor");
    }
    ParamStore& params = state.params;
    // Normalization running statistics are committed only after a finite loss.
    ParamStore staged = params;
    staged.zero_grad();
    Context ctx(staged, Mode{.training = true});
    ForwardOutput out = forward_full(ctx, batch.input, sc.model);
    LossTerms terms = compute_losses(out.mask_initial, out.restored_final, out.mask_final,
                                     {batch.gt_image, batch.gt_mask}, *sc.extractor, sc.weights);
    const LossBreakdown b = terms.breakdown();
    if (!std::isfinite(b.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << state.step << ": mask_pre=" << b.mask_pre
           << " mask_fin=" << b.mask_fin << " content=" << b.content
           << " perceptual=" << b.perceptual;
        throw NonFiniteLossError(os.str());
    }
    ag::backward(terms.total);

    double clip_scale = 1.0;
    if (sc.train.clip_gradients) {
        const double norm = gradient_norm(staged);
        if (norm > sc.train.clip_norm) {
            clip_scale = sc.train.clip_norm / norm;
        }
    }

    const double t = static_cast<double>(state.step + 1);
    const double b1 = sc.train.adam_beta1;
    const double b2 = sc.train.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (auto& [name, p] : staged.params()) {
        if (!p.has_grad()) {
            continue;
        }
        Tensor& m = state.adam_m.at(name);
        Tensor& v = state.adam_v.at(name);
        Tensor& value = p.mutable_value();
        const Tensor& grad = p.grad();
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double g = grad[i] * clip_scale;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            value[i] -= sc.train.lr * mh / (std::sqrt(vh) + sc.train.adam_eps);
        }
    }
    staged.zero_grad();
    params = std::move(staged);

    const double k = t;
    auto blend = [k](double avg, double x) { return avg + (x - avg) / k; };
    state.running.mask_pre = blend(state.running.mask_pre, b.mask_pre);
    state.running.mask_fin = blend(state.running.mask_fin, b.mask_fin);
    state.running.content = blend(state.running.content, b.content);
    state.running.perceptual = blend(state.running.perceptual, b.perceptual);
    state.running.total = blend(state.running.total, b.total);
    state.step += 1;
    return b;
}

std::string curve_csv_header() { return "step,epoch,mask_pre,mask_fin,content,perceptual,total"; }

std::string curve_csv_line(const CurveRow& row) {
    std::ostringstream os;
    os << std::setprecision(17) << row.step << ',' << row.epoch << ',' << row.loss.mask_pre << ','
       << row.loss.mask_fin << ',' << row.loss.content << ',' << row.loss.perceptual << ','
       << row.loss.total;
    return os.str();
}

// ---- checkpoints ----

namespace {

nlohmann::json model_to_json(const ModelConfig& c) {
    return {{"levels", c.levels},
            {"channels", c.channels},
            {"enable_scsm", c.enable_scsm},
            {"enable_macr", c.enable_macr},
            {"enable_smf", c.enable_smf},
            {"shared_refinement_encoder", c.shared_refinement_encoder},
            {"seed", c.seed}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.levels = j.at("levels").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.enable_scsm = j.at("enable_scsm").get<bool>();
    c.enable_macr = j.at("enable_macr").get<bool>();
    c.enable_smf = j.at("enable_smf").get<bool>();
    c.shared_refinement_encoder = j.at("shared_refinement_encoder").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return validate_config(c);
}

nlohmann::json train_to_json(const TrainConfig& t) {
    return {{"lr", t.lr},
            {"batch_size", t.batch_size},
            {"patch", t.patch},
            {"epochs", t.epochs},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"adam_eps", t.adam_eps},
            {"log_every", t.log_every},
            {"checkpoint_dir", t.checkpoint_dir},
            {"clip_gradients", t.clip_gradients},
            {"clip_norm", t.clip_norm},
            {"augment", t.augment}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig t;
    t.lr = j.at("lr").get<double>();
    t.batch_size = j.at("batch_size").get<int>();
    t.patch = j.at("patch").get<int>();
    t.epochs = j.at("epochs").get<int>();
    t.adam_beta1 = j.at("adam_beta1").get<double>();
    t.adam_beta2 = j.at("adam_beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.log_every = j.at("log_every").get<int>();
    t.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    t.clip_gradients = j.at("clip_gradients").get<bool>();
    t.clip_norm = j.at("clip_norm").get<double>();
    t.augment = j.at("augment").get<bool>();
    return t;
}

Tensor scalar_tensor(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

const Tensor& require_array(const Archive& ar, const std::string& name, const std::string& path) {
    auto it = ar.arrays.find(name);
    if (it == ar.arrays.end()) {
        throw ArchiveError(path + ": missing array " + name);
    }
    return it->second;
}

} // namespace

void Checkpoint::save(const std::string& path) const {
    Archive ar;
    ar.meta["kind"] = "univ2d_checkpoint";
    ar.meta["model"] = model_to_json(model);
    ar.meta["train"] = train_to_json(train);
    ar.meta["alpha"] = weights.alpha;
    ar.meta["step"] = state.step;
    ar.meta["epoch"] = epoch;
    for (const auto& [name, p] : state.params.params()) {
        ar.arrays["param/" + name] = p.value();
    }
    for (const auto& [name, b] : state.params.buffers()) {
        ar.arrays["buffer/" + name] = b;
    }
    for (const auto& [name, m] : state.adam_m) {
        ar.arrays["adam_m/" + name] = m;
    }
    for (const auto& [name, v] : state.adam_v) {
        ar.arrays["adam_v/" + name] = v;
    }
    const LossBreakdown& r = state.running;
    ar.arrays["running/mask_pre"] = scalar_tensor(r.mask_pre);
    ar.arrays["running/mask_fin"] = scalar_tensor(r.mask_fin);
    ar.arrays["running/content"] = scalar_tensor(r.content);
    ar.arrays["running/perceptual"] = scalar_tensor(r.perceptual);
    ar.arrays["running/total"] = scalar_tensor(r.total);
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
    ar.save(path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (ar.meta.value("kind", std::string()) != "univ2d_checkpoint") {
        throw ArchiveError(path + " is not a univ2d checkpoint");
    }
    Checkpoint ck;
    try {
        ck.model = model_from_json(ar.meta.at("model"));
        ck.train = train_from_json(ar.meta.at("train"));
        ck.weights.alpha = ar.meta.at("alpha").get<double>();
        ck.state.step = ar.meta.at("step").get<std::int64_t>();
        ck.epoch = ar.meta.at("epoch").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(path + ": bad checkpoint metadata: " + e.what());
    }
    // Every parameter declared for this model config must appear in the archive.
    const ParamSpecList specs = model_param_specs(ck.model);
    for (const auto& spec : specs.params()) {
        const Tensor& value = require_array(ar, "param/" + spec.name, path);
        if (value.shape() != spec.shape) {
            throw ArchiveError(path + ": " + spec.name + " has shape " + value.shape().str());
        }
        ck.state.params.add_param(spec.name, value);
        ck.state.adam_m.emplace(spec.name, require_array(ar, "adam_m/" + spec.name, path));
        ck.state.adam_v.emplace(spec.name, require_array(ar, "adam_v/" + spec.name, path));
    }
    for (const auto& spec : specs.buffers()) {
        ck.state.params.add_buffer(spec.name, require_array(ar, "buffer/" + spec.name, path));
    }
    LossBreakdown& r = ck.state.running;
    r.mask_pre = require_array(ar, "running/mask_pre", path)[0];
    r.mask_fin = require_array(ar, "running/mask_fin", path)[0];
    r.content = require_array(ar, "running/content", path)[0];
    r.perceptual = require_array(ar, "running/perceptual", path)[0];
    r.total = require_array(ar, "running/total", path)[0];
    return ck;
}

// ---- training loop ----

TrainResult train_loop(const std::vector<Sample>& dataset, const ModelConfig& model,
                       const TrainConfig& train, const LossWeights& weights,
                       const PerceptualExtractor& extractor, const TrainLoopOptions& options) {
    const ModelConfig mc = validate_config(model);
    validate_train_config(train, mc);
    validate_loss_weights(weights);
    if (dataset.empty()) {
        throw ConfigError("training needs at least one sample");
    }

    TrainResult result;
    int first_epoch = 0;
    if (options.resume) {
        if (!(options.resume->model == mc)) {
            throw ConfigError("checkpoint model config differs from the requested one");
        }
        result.state = options.resume->state;
        first_epoch = options.resume->epoch;
    } else {
        result.state = TrainState::fresh(mc);
    }

    std::ofstream curve;
    if (!options.curve_path.empty()) {
        const bool exists = fs::exists(options.curve_path);
        const fs::path parent = fs::path(options.curve_path).parent_path();
        if (!parent.empty()) {
            fs::create_directories(parent);
        }
        curve.open(options.curve_path, std::ios::app);
        if (!curve) {
            throw Error("cannot open loss curve " + options.curve_path);
        }
        if (!exists) {
            curve << curve_csv_header() << '\n';
        }
    }

    const StepContext sc{mc, train, weights, &extractor};
    const auto n = dataset.size();
    const auto batch = static_cast<std::size_t>(train.batch_size);
    for (int epoch = first_epoch; epoch < train.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(mix_seed(mc.seed, "epoch/" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            std::vector<Sample> items;
            for (std::size_t i = start; i < std::min(n, start + batch); ++i) {
                const Sample& s = dataset[order[i]];
                if (train.augment) {
                    const std::string key =
                        "patch/" + std::to_string(epoch) + "/" + std::to_string(order[i]);
                    items.push_back(patchify(s, train.patch, mix_seed(mc.seed, key)));
                } else {
                    check_input_dims(s.input.tensor().shape(), mc);
                    items.push_back(s);
                }
            }
            CurveRow row;
            row.epoch = epoch;
            row.loss = train_step(result.state, make_batch(items), sc);
            row.step = result.state.step;
            result.curve.push_back(row);
            if (curve.is_open()) {
                curve << curve_csv_line(row) << '\n';
                curve.flush();
            }
            if (options.on_step) {
                options.on_step(row);
            }
        }
        if (!train.checkpoint_dir.empty()) {
            Checkpoint ck{mc, weights, train, result.state, epoch + 1};
            const fs::path dir(train.checkpoint_dir);
            ck.save((dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt")).string());
            ck.save((dir / "latest.ckpt").string());
        }
    }
    return result;
}

// ---- evaluation and inference ----

MetricReport evaluate(const std::vector<Sample>& dataset, const Predictor& predictor) {
    MetricReport report;
    for (const auto& s : dataset) {
        const Prediction p = predictor(s);
        MetricRow row;
        row.filename = s.id;
        row.psnr = psnr(p.restored, s.gt_image.tensor());
        row.ssim = ssim(p.restored, s.gt_image.tensor());
        row.s_measure = s_measure(p.mask, s.gt_mask.tensor());
        row.weighted_f = weighted_f_measure(p.mask, s.gt_mask.tensor());
        row.e_measure = e_measure(p.mask, s.gt_mask.tensor());
        row.mae = mae(p.mask, s.gt_mask.tensor());
        report.rows.push_back(row);
    }
    return report;
}

Prediction predict(ParamStore& params, const ModelConfig& config, const Image& image) {
    Context ctx(params, Mode{});
    ForwardOutput out = forward_full(ctx, ag::Var::constant(image.tensor()), config);
    return {out.restored_final.value(), out.mask_final.value()};
}

MetricReport evaluate(const std::vector<Sample>& dataset, ParamStore& params,
                      const ModelConfig& config) {
    return evaluate(dataset, [&](const Sample& s) { return predict(params, config, s.input); });
}

InferOutput infer(const std::string& image_path, const std::string& checkpoint_path,
                  const std::string& out_dir) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    const Image image = load_png_image(image_path);
    const Prediction p = predict(ck.state.params, ck.model, image);
    const std::string stem = fs::path(image_path).stem().string();
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    InferOutput out{(dir / (stem + "_restored.png")).string(),
                    (dir / (stem + "_mask.png")).string()};
    save_png_image(Image(p.restored), out.restored_path);
    save_png_mask(SaliencyMask(p.mask), out.mask_path);
    return out;
}

OverfitResult overfit_protocol(const ModelConfig& model, const OverfitOptions& options) {
    const std::vector<Sample> data = synth_dataset(options.samples, options.size, options.data_seed);
    TrainConfig tc;
    tc.lr = options.lr;
    tc.batch_size = options.samples;
    tc.patch = options.size;
    tc.epochs = options.steps;
    tc.augment = false;
    const PerceptualExtractor extractor = PerceptualExtractor::seeded();
    OverfitResult r;
    r.training = train_loop(data, model, tc, LossWeights{}, extractor);
    r.report = evaluate(data, r.training.state.params, model);
    return r;
}

} // namespace univ2d
