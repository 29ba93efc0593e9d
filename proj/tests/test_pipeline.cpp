#include "model_fixtures.hpp"
#include "univ2d/errors.hpp"
#include "univ2d/model.hpp"
#include "univ2d/pipeline.hpp"
#include "univ2d/plot.hpp"

#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace univ2d;
using namespace univ2d::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] std::string str() const { return path_.string(); }
    [[nodiscard]] std::string operator/(const std::string& p) const { return (path_ / p).string(); }

private:
    fs::path path_;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig small_train(int batch = 4) {
    TrainConfig t;
    t.lr = 1e-3;
    t.batch_size = batch;
    t.patch = 16;
    t.epochs = 1;
    t.augment = false;
    return t;
}

struct Fixture {
    ModelConfig model = ModelConfig::tiny();
    std::vector<Sample> data = synth_dataset(4, 16, 3);
    PerceptualExtractor extractor = PerceptualExtractor::seeded();
    StepContext ctx() const { return {model, small_train(), LossWeights{}, &extractor}; }
};

} // namespace

// ---- forward ----

TEST(ForwardFull, OutputsMatchContract) {
    ModelConfig c = four_level_config();
    c.channels = {4, 8, 12, 16};
    ParamStore store = init_params(c);
    Context ctx(store, Mode{});
    const ForwardOutput o = forward_full(ctx, random_images(2, 32, 32, 1), c);
    for (const auto* v : {&o.restored_initial, &o.restored_final, &o.composite}) {
        EXPECT_EQ(v->shape(), (Shape{2, 3, 32, 32}));
    }
    for (const auto* v : {&o.mask_initial, &o.mask_final}) {
        EXPECT_EQ(v->shape(), (Shape{2, 1, 32, 32}));
    }
    for (const auto* v : {&o.restored_initial, &o.restored_final, &o.mask_initial, &o.mask_final}) {
        EXPECT_GT(v->value().min(), 0.0);
        EXPECT_LT(v->value().max(), 1.0);
    }
}

TEST(ForwardFull, AblationsChangeOutputs) {
    const ag::Var img = random_images(1, 16, 16, 2);
    ModelConfig base = ModelConfig::tiny();
    ParamStore s0 = init_params(base);
    Context c0(s0, Mode{});
    const Tensor ref = forward_full(c0, img, base).restored_final.value();
    for (int which = 0; which < 3; ++which) {
        ModelConfig c = base;
        (which == 0 ? c.enable_scsm : which == 1 ? c.enable_macr : c.enable_smf) = false;
        ParamStore s = init_params(c);
        Context cx(s, Mode{});
        EXPECT_FALSE(forward_full(cx, img, c).restored_final.value() == ref) << which;
    }
}

TEST(ForwardFull, RejectsIndivisibleInput) {
    ModelConfig c = four_level_config();
    ParamStore store = init_params(c);
    Context ctx(store, Mode{});
    EXPECT_THROW(forward_full(ctx, random_images(1, 20, 20, 3), c), ShapeError);
}

// ---- training step ----

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
    Fixture f;
    TrainState state = TrainState::fresh(f.model);
    const ParamStore before = state.params;
    StepContext sc = f.ctx();
    sc.train.lr = 0.0;
    (void)train_step(state, make_batch(f.data), sc);
    for (const auto& [name, p] : state.params.params()) {
        EXPECT_TRUE(p.value() == before.param(name).value()) << name;
    }
}

TEST(TrainStep, IncrementsStepByOneAndReturnsPreUpdateLoss) {
    Fixture f;
    TrainState state = TrainState::fresh(f.model);
    const LossBreakdown b = train_step(state, make_batch(f.data), f.ctx());
    EXPECT_EQ(state.step, 1);
    EXPECT_TRUE(std::isfinite(b.total));
    EXPECT_NEAR(b.total, 0.5 * (b.mask_pre + b.mask_fin) + b.content + b.perceptual, 1e-12);
    (void)train_step(state, make_batch(f.data), f.ctx());
    EXPECT_EQ(state.step, 2);
}

TEST(TrainStep, NonFiniteLossRaisesAndLeavesStateUntouched) {
    Fixture f;
    TrainState state = TrainState::fresh(f.model);
    state.params.param("ref.head_image.b").mutable_value()[0] = std::nan("");
    const ParamStore before = state.params;
    EXPECT_THROW(train_step(state, make_batch(f.data), f.ctx()), NonFiniteLossError);
    EXPECT_EQ(state.step, 0);
    EXPECT_TRUE(state.adam_m.empty() || state.adam_m.begin()->second.max() == 0.0);
    for (const auto& [name, p] : state.params.params()) {
        if (name != "ref.head_image.b") {
            EXPECT_TRUE(p.value() == before.param(name).value()) << name;
        }
    }
}

TEST(TrainStep, LossDecreasesOverHundredStepsOnFixedBatch) {
    Fixture f;
    TrainState state = TrainState::fresh(f.model);
    const Batch batch = make_batch(f.data);
    const double first = train_step(state, batch, f.ctx()).total;
    double last = first;
    for (int i = 1; i < 100; ++i) {
        last = train_step(state, batch, f.ctx()).total;
    }
    EXPECT_LT(last, first);
}

TEST(TrainStep, GradientNormIsGlobalL2) {
    ParamStore s;
    s.add_param("a", Tensor(Shape{1, 1, 1, 2}));
    s.add_param("b", Tensor(Shape{1, 1, 1, 1}));
    ag::Var loss = ag::scale(ag::sum_all(s.param("a")), 3.0) + ag::scale(ag::sum_all(s.param("b")), 4.0);
    ag::backward(loss);
    EXPECT_NEAR(gradient_norm(s), std::sqrt(9.0 + 9.0 + 16.0), 1e-12);
}

TEST(TrainConfig, ValidationAndDocument) {
    const ModelConfig m = ModelConfig::tiny();
    TrainConfig t = small_train();
    EXPECT_NO_THROW(validate_train_config(t, m));
    t.patch = 15;
    EXPECT_THROW(validate_train_config(t, m), ConfigError);
    t = small_train();
    t.batch_size = 0;
    EXPECT_THROW(validate_train_config(t, m), ConfigError);
    const auto doc = KeyValueDocument::parse("lr = 0.01\nbatch_size = 2\naugment = false\n");
    const TrainConfig parsed = train_config_from(doc);
    EXPECT_DOUBLE_EQ(parsed.lr, 0.01);
    EXPECT_EQ(parsed.batch_size, 2);
    EXPECT_FALSE(parsed.augment);
    EXPECT_EQ(parsed.epochs, TrainConfig{}.epochs);
}

TEST(TrainConfig, SeedOverrideFromEnvironment) {
    ::setenv("UNIV2D_SEED", "1234", 1);
    EXPECT_EQ(apply_seed_override(ModelConfig::tiny()).seed, 1234u);
    ::setenv("UNIV2D_SEED", "abc", 1);
    EXPECT_THROW(apply_seed_override(ModelConfig::tiny()), ConfigError);
    ::unsetenv("UNIV2D_SEED");
    EXPECT_EQ(apply_seed_override(ModelConfig::tiny()).seed, 0u);
}

// ---- loss curve ----

TEST(LossCurve, LineRoundTripsThroughText) {
    const CurveRow row{7, 2, {0.1, 0.2, 1.0 / 3.0, 0.4, 0.9}};
    EXPECT_EQ(curve_csv_header(), "step,epoch,mask_pre,mask_fin,content,perceptual,total");
    std::stringstream ss(curve_csv_line(row));
    std::vector<std::string> cells;
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 7u);
    EXPECT_EQ(cells[0], "7");
    EXPECT_EQ(cells[1], "2");
    EXPECT_EQ(std::stod(cells[4]), 1.0 / 3.0);
}

// ---- training loop ----

TEST(TrainLoop, StepCountAndCurveRows) {
    Fixture f;
    TempDir dir("univ2d_loop_steps");
    TrainConfig t = small_train(2);
    t.epochs = 2;
    t.checkpoint_dir = dir / "ck";
    TrainLoopOptions opt;
    opt.curve_path = dir / "curve.csv";
    int calls = 0;
    opt.on_step = [&](const CurveRow&) { ++calls; };
    const TrainResult r = train_loop(f.data, f.model, t, LossWeights{}, f.extractor, opt);
    EXPECT_EQ(r.curve.size(), 4u);
    EXPECT_EQ(r.state.step, 4);
    EXPECT_EQ(calls, 4);
    std::ifstream in(opt.curve_path);
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 5);
    EXPECT_TRUE(fs::exists(dir / "ck/epoch_1.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "ck/epoch_2.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "ck/latest.ckpt"));
}

TEST(TrainLoop, PartialLastBatchCounts) {
    Fixture f;
    f.data = synth_dataset(5, 16, 4);
    TrainConfig t = small_train(2);
    const TrainResult r = train_loop(f.data, f.model, t, LossWeights{}, f.extractor);
    EXPECT_EQ(r.curve.size(), 3u);
}

TEST(TrainLoop, AugmentedRunsUsePatches) {
    Fixture f;
    f.data = synth_dataset(2, 32, 5);
    TrainConfig t = small_train(2);
    t.augment = true;
    t.patch = 16;
    EXPECT_EQ(train_loop(f.data, f.model, t, LossWeights{}, f.extractor).curve.size(), 1u);
}

TEST(TrainLoop, ResumeReproducesUninterruptedRun) {
    Fixture f;
    TempDir dir("univ2d_loop_resume");
    TrainConfig t = small_train(2);
    t.augment = true;
    t.patch = 16;
    f.data = synth_dataset(4, 32, 6);
    t.epochs = 3;
    const TrainResult full = train_loop(f.data, f.model, t, LossWeights{}, f.extractor);

    TrainConfig first = t;
    first.epochs = 1;
    first.checkpoint_dir = dir / "ck";
    (void)train_loop(f.data, f.model, first, LossWeights{}, f.extractor);
    TrainLoopOptions opt;
    opt.resume = Checkpoint::load(dir / "ck/epoch_1.ckpt");
    const TrainResult resumed = train_loop(f.data, f.model, t, LossWeights{}, f.extractor, opt);

    ASSERT_EQ(resumed.curve.size(), 4u);
    for (std::size_t i = 0; i < resumed.curve.size(); ++i) {
        EXPECT_EQ(resumed.curve[i].step, full.curve[i + 2].step);
        EXPECT_EQ(resumed.curve[i].loss.total, full.curve[i + 2].loss.total) << i;
    }
    EXPECT_TRUE(resumed.state.params == full.state.params);
}

TEST(TrainLoop, RepeatedRunsAreBitIdentical) {
    Fixture f;
    TrainConfig t = small_train(2);
    t.epochs = 2;
    const TrainResult a = train_loop(f.data, f.model, t, LossWeights{}, f.extractor);
    std::vector<double> ballast(12345, 1.0);  // shifts later heap addresses
    const TrainResult b = train_loop(f.data, f.model, t, LossWeights{}, f.extractor);
    ASSERT_EQ(a.curve.size(), b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        EXPECT_EQ(curve_csv_line(a.curve[i]), curve_csv_line(b.curve[i]));
    }
    EXPECT_TRUE(a.state.params == b.state.params);
    EXPECT_EQ(ballast.size(), 12345u);
}

TEST(TrainLoop, ResumeWithDifferentModelRejected) {
    Fixture f;
    TempDir dir("univ2d_loop_mismatch");
    TrainConfig t = small_train();
    t.checkpoint_dir = dir.str();
    (void)train_loop(f.data, f.model, t, LossWeights{}, f.extractor);
    TrainLoopOptions opt;
    opt.resume = Checkpoint::load(dir / "latest.ckpt");
    ModelConfig other = f.model;
    other.enable_macr = false;
    EXPECT_THROW(train_loop(f.data, other, t, LossWeights{}, f.extractor, opt), ConfigError);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripIsBitExact) {
    Fixture f;
    TempDir dir("univ2d_ckpt");
    TrainState state = TrainState::fresh(f.model);
    (void)train_step(state, make_batch(f.data), f.ctx());
    Checkpoint ck{f.model, LossWeights{0.3}, small_train(), state, 5};
    ck.save(dir / "a.ckpt");
    const Checkpoint back = Checkpoint::load(dir / "a.ckpt");
    EXPECT_EQ(back.model, f.model);
    EXPECT_DOUBLE_EQ(back.weights.alpha, 0.3);
    EXPECT_EQ(back.epoch, 5);
    EXPECT_EQ(back.state.step, 1);
    EXPECT_TRUE(back.state.params == state.params);
    ASSERT_EQ(back.state.adam_m.size(), state.adam_m.size());
    for (const auto& [k, v] : state.adam_m) {
        EXPECT_TRUE(back.state.adam_m.at(k) == v) << k;
        EXPECT_TRUE(back.state.adam_v.at(k) == state.adam_v.at(k)) << k;
    }
    EXPECT_DOUBLE_EQ(back.train.lr, small_train().lr);
    EXPECT_EQ(back.state.running.total, state.running.total);
}

TEST(Checkpoint, ForeignArchiveRejected) {
    TempDir dir("univ2d_ckpt_bad");
    PerceptualExtractor::seeded().save(dir / "x.bin");
    EXPECT_THROW(Checkpoint::load(dir / "x.bin"), ArchiveError);
}

// ---- evaluation ----

TEST(Evaluate, PassthroughPredictorScoresPerfectly) {
    const auto data = synth_dataset(3, 32, 7);
    const MetricReport r = evaluate(data, [](const Sample& s) {
        return Prediction{s.gt_image.tensor(), s.gt_mask.tensor()};
    });
    ASSERT_EQ(r.rows.size(), 3u);
    EXPECT_EQ(r.rows[0].filename, data[0].id);
    const MetricRow m = r.mean();
    EXPECT_EQ(m.psnr, 99.0);
    EXPECT_NEAR(m.ssim, 1.0, 1e-9);
    EXPECT_NEAR(m.s_measure, 1.0, 1e-9);
    EXPECT_NEAR(m.weighted_f, 1.0, 1e-9);
    EXPECT_NEAR(m.e_measure, 1.0, 1e-9);
    EXPECT_EQ(m.mae, 0.0);
    const std::string csv = r.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Evaluate, ModelEvaluationIsDeterministic) {
    const auto data = synth_dataset(2, 16, 8);
    ParamStore p = init_params(ModelConfig::tiny());
    EXPECT_EQ(evaluate(data, p, ModelConfig::tiny()).to_csv(), evaluate(data, p, ModelConfig::tiny()).to_csv());
}

// ---- inference ----

TEST(Infer, WritesInputSizedOutputs) {
    Fixture f;
    TempDir dir("univ2d_infer");
    Checkpoint{f.model, LossWeights{}, small_train(), TrainState::fresh(f.model), 0}.save(dir / "m.ckpt");
    const auto sample = synth_dataset(1, 32, 9)[0];
    save_png_image(sample.input, dir / "scene.png");
    const InferOutput a = infer(dir / "scene.png", dir / "m.ckpt", dir / "out");
    EXPECT_EQ(fs::path(a.restored_path).filename(), "scene_restored.png");
    EXPECT_EQ(fs::path(a.mask_path).filename(), "scene_mask.png");
    const cv::Mat img = cv::imread(a.restored_path, cv::IMREAD_UNCHANGED);
    const cv::Mat mask = cv::imread(a.mask_path, cv::IMREAD_UNCHANGED);
    EXPECT_EQ(img.rows, 32);
    EXPECT_EQ(img.cols, 32);
    EXPECT_EQ(img.channels(), 3);
    EXPECT_EQ(mask.channels(), 1);
    EXPECT_EQ(mask.depth(), CV_8U);
    const std::string first = slurp(a.mask_path);
    (void)infer(dir / "scene.png", dir / "m.ckpt", dir / "out");
    EXPECT_EQ(slurp(a.mask_path), first);
}

// ---- plotting ----

TEST(Plot, RendersCurveAndReport) {
    TempDir dir("univ2d_plot");
    {
        std::ofstream out(dir / "curve.csv");
        out << curve_csv_header() << '\n';
        for (int i = 1; i <= 5; ++i) out << curve_csv_line({i, 0, {1.0 / i, 0.5, 0.3, 0.2, 1.0}}) << '\n';
    }
    plot_csv(dir / "curve.csv", dir / "curve.png");
    const cv::Mat png = cv::imread(dir / "curve.png");
    EXPECT_FALSE(png.empty());
    const CsvTable t = CsvTable::read(dir / "curve.csv");
    EXPECT_EQ(t.header.size(), 7u);
    EXPECT_EQ(t.rows.size(), 5u);
}

// ---- command line ----

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(UNIV2D_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

} // namespace

TEST(Cli, EndToEndSmoke) {
    TempDir dir("univ2d_cli");
    ASSERT_EQ(run_cli("synth --out " + (dir / "data") + " --n 2 --size 16 --seed 1"), 0);
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "levels = 2\nchannels = [4, 8]\nlr = 0.001\nbatch_size = 2\npatch = 16\nepochs = 1\n"
               "augment = false\n";
    }
    ASSERT_EQ(run_cli("train --config " + (dir / "run.cfg") + " --data " + (dir / "data") + " --out " +
                      (dir / "run")),
              0);
    EXPECT_TRUE(fs::exists(dir / "run/final.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run/loss_curve.csv"));
    EXPECT_TRUE(fs::exists(dir / "run/checkpoints/epoch_1.ckpt"));
    ASSERT_EQ(run_cli("eval --checkpoint " + (dir / "run/final.ckpt") + " --data " + (dir / "data") +
                      " --report " + (dir / "report.csv")),
              0);
    EXPECT_EQ(MetricReport::read_csv(dir / "report.csv").rows.size(), 2u);
    ASSERT_EQ(run_cli("infer --checkpoint " + (dir / "run/final.ckpt") + " --image " +
                      (dir / "data/input/synth_0000.png") + " --out " + (dir / "pred")),
              0);
    EXPECT_TRUE(fs::exists(dir / "pred/synth_0000_mask.png"));
    ASSERT_EQ(run_cli("plot --report " + (dir / "report.csv") + " --out " + (dir / "report.png")), 0);
    EXPECT_TRUE(fs::exists(dir / "report.png"));
}

TEST(Cli, ErrorsExitNonZero) {
    TempDir dir("univ2d_cli_err");
    EXPECT_NE(run_cli(""), 0);
    EXPECT_NE(run_cli("eval --checkpoint " + (dir / "missing.ckpt") + " --data " + dir.str() +
                      " --report " + (dir / "r.csv")),
              0);
    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "levels = 2\nchannels = [4, 9]\n";
    }
    EXPECT_NE(run_cli("train --config " + (dir / "bad.cfg") + " --data " + dir.str() + " --out " +
                      (dir / "run")),
              0);
}
