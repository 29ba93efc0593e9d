#include "univ2d/data.hpp"
#include "univ2d/errors.hpp"
#include "univ2d/pipeline.hpp"
#include "univ2d/plot.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace univ2d;

namespace {

struct SynthArgs {
    std::string out;
    int n = 16;
    int size = 64;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string extractor;
    std::string resume;
};

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string report;
};

struct InferArgs {
    std::string checkpoint;
    std::string image;
    std::string out;
};

struct PlotArgs {
    std::string report;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    const auto samples = synth_dataset(a.n, a.size, a.seed);
    save_dataset(samples, a.out);
    std::cout << "wrote " << samples.size() << " samples to " << a.out << '\n';
    return 0;
}

int run_train(const TrainArgs& a) {
    const KeyValueDocument doc = KeyValueDocument::load(a.config);
    const ModelConfig model = validate_config(apply_seed_override(model_config_from(doc)));
    const LossWeights weights = loss_weights_from(doc);
    TrainConfig train = train_config_from(doc);
    if (train.checkpoint_dir.empty()) {
        train.checkpoint_dir = (fs::path(a.out) / "checkpoints").string();
    }
    const auto dataset = load_dataset(a.data);
    const PerceptualExtractor extractor =
        a.extractor.empty() ? PerceptualExtractor::seeded() : PerceptualExtractor::load(a.extractor);

    TrainLoopOptions options;
    options.curve_path = (fs::path(a.out) / "loss_curve.csv").string();
    if (!a.resume.empty()) {
        options.resume = Checkpoint::load(a.resume);
    }
    const int log_every = std::max(1, train.log_every);
    options.on_step = [log_every](const CurveRow& row) {
        if (row.step % log_every == 0) {
            std::cout << "step " << row.step << " epoch " << row.epoch << " total " << row.loss.total
                      << '\n';
        }
    };
    fs::create_directories(a.out);
    TrainResult result = train_loop(dataset, model, train, weights, extractor, options);
    Checkpoint final_ck{model, weights, train, std::move(result.state), train.epochs};
    const std::string final_path = (fs::path(a.out) / "final.ckpt").string();
    final_ck.save(final_path);
    std::cout << "trained " << result.curve.size() << " steps; checkpoint " << final_path << '\n';
    return 0;
}

int run_eval(const EvalArgs& a) {
    Checkpoint ck = Checkpoint::load(a.checkpoint);
    const auto dataset = load_dataset(a.data);
    const MetricReport report = evaluate(dataset, ck.state.params, ck.model);
    report.write_csv(a.report);
    const MetricRow m = report.mean();
    std::cout << "psnr " << m.psnr << " ssim " << m.ssim << " s_measure " << m.s_measure
              << " weighted_f " << m.weighted_f << " e_measure " << m.e_measure << " mae "
              << m.mae << '\n';
    return 0;
}

int run_infer(const InferArgs& a) {
    const InferOutput out = infer(a.image, a.checkpoint, a.out);
    std::cout << out.restored_path << '\n' << out.mask_path << '\n';
    return 0;
}

int run_plot(const PlotArgs& a) {
    plot_csv(a.report, a.out);
    std::cout << "wrote " << a.out << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"univ2d: joint underwater image restoration and salient object detection"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* cmd_synth = app.add_subcommand("synth", "write a synthetic paired dataset");
    cmd_synth->add_option("--out", synth.out, "output dataset root")->required();
    cmd_synth->add_option("--n", synth.n, "number of samples")->check(CLI::NonNegativeNumber);
    cmd_synth->add_option("--size", synth.size, "image side in pixels")->check(CLI::Range(16, 4096));
    cmd_synth->add_option("--seed", synth.seed, "generator seed");

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "train on a paired dataset");
    cmd_train->add_option("--config", train.config, "key = value config file")->required();
    cmd_train->add_option("--data", train.data, "dataset root")->required();
    cmd_train->add_option("--out", train.out, "run directory")->required();
    cmd_train->add_option("--extractor", train.extractor, "perceptual extractor archive");
    cmd_train->add_option("--resume", train.resume, "checkpoint to resume from");

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    cmd_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    cmd_eval->add_option("--data", eval.data, "dataset root")->required();
    cmd_eval->add_option("--report", eval.report, "CSV report path")->required();

    InferArgs inf;
    auto* cmd_infer = app.add_subcommand("infer", "restore one image and predict its mask");
    cmd_infer->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
    cmd_infer->add_option("--image", inf.image, "input PNG")->required();
    cmd_infer->add_option("--out", inf.out, "output directory")->required();

    PlotArgs plot;
    auto* cmd_plot = app.add_subcommand("plot", "render a CSV as a grid of charts");
    cmd_plot->add_option("--report", plot.report, "loss curve or metric CSV")->required();
    cmd_plot->add_option("--out", plot.out, "output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*cmd_synth) return run_synth(synth);
        if (*cmd_train) return run_train(train);
        if (*cmd_eval) return run_eval(eval);
        if (*cmd_infer) return run_infer(inf);
        if (*cmd_plot) return run_plot(plot);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
