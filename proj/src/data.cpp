#include "univ2d/data.hpp"

#include "univ2d/errors.hpp"
#include "univ2d/params.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

namespace univ2d {

namespace fs = std::filesystem;

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi_inclusive) {
    const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
    return lo + static_cast<int>(rng() % span);
}

/// Planar [1,C,H,W] tensor -> interleaved 8-bit Mat (RGB planes become BGR).
cv::Mat to_mat_u8(const Tensor& t) {
    const Shape s = t.shape();
    cv::Mat mat(s.h, s.w, s.c == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < s.h; ++y) {
        auto* row = mat.ptr<unsigned char>(y);
        for (int x = 0; x < s.w; ++x) {
            for (int c = 0; c < s.c; ++c) {
                const int src_c = s.c == 3 ? 2 - c : c;
                const double v = std::clamp(t.at(0, src_c, y, x), 0.0, 1.0);
                row[x * s.c + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    return mat;
}

Tensor from_mat_u8(const cv::Mat& mat) {
    const int ch = mat.channels();
    Tensor t(Shape{1, ch, mat.rows, mat.cols});
    for (int y = 0; y < mat.rows; ++y) {
        const auto* row = mat.ptr<unsigned char>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < ch; ++c) {
                const int dst_c = ch == 3 ? 2 - c : c;
                t.at(0, dst_c, y, x) = row[x * ch + c] / 255.0;
            }
        }
    }
    return t;
}

void write_png(const cv::Mat& mat, const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
    if (!cv::imwrite(path, mat)) {
        throw Error("cannot write " + path);
    }
}

std::set<std::string> png_stems(const fs::path& dir) {
    std::set<std::string> out;
    if (!fs::is_directory(dir)) {
        return out;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            out.insert(entry.path().stem().string());
        }
    }
    return out;
}

Tensor blur_planes(const Tensor& src, double sigma) {
    const Shape s = src.shape();
    Tensor out(s);
    for (int c = 0; c < s.c; ++c) {
        cv::Mat plane(s.h, s.w, CV_64F, const_cast<double*>(src.ptr() + c * s.plane()));
        cv::Mat dst(s.h, s.w, CV_64F, out.ptr() + c * s.plane());
        cv::GaussianBlur(plane, dst, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT_101);
    }
    return out;
}

// ---- procedural scenes ----

struct Scene {
    Tensor clean;
    Tensor mask;
};

bool inside_polygon(double px, double py, const std::vector<std::array<double, 2>>& poly) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > py) != (b[1] > py) &&
            px < (b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]) {
            in = !in;
        }
    }
    return in;
}

Tensor draw_shape_mask(std::mt19937_64& rng, int size) {
    const double s = size;
    const double cx = uniform(rng, 0.3, 0.7) * s;
    const double cy = uniform(rng, 0.3, 0.7) * s;
    Tensor mask(Shape{1, 1, size, size});
    if (rng() % 2 == 0) {
        const double rx = uniform(rng, 0.12, 0.42) * s;
        const double ry = uniform(rng, 0.12, 0.42) * s;
        const double angle = uniform(rng, 0.0, std::numbers::pi);
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                const double u = (dx * ca + dy * sa) / rx;
                const double v = (-dx * sa + dy * ca) / ry;
                mask.at(0, 0, y, x) = u * u + v * v <= 1.0 ? 1.0 : 0.0;
            }
        }
    } else {
        const int vertices = uniform_int(rng, 3, 7);
        const double radius = uniform(rng, 0.18, 0.42) * s;
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        std::vector<std::array<double, 2>> poly;
        for (int k = 0; k < vertices; ++k) {
            const double a = phase + 2.0 * std::numbers::pi * k / vertices;
            const double r = radius * uniform(rng, 0.6, 1.0);
            poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
        }
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                mask.at(0, 0, y, x) = inside_polygon(x + 0.5, y + 0.5, poly) ? 1.0 : 0.0;
            }
        }
    }
    return mask;
}

Scene draw_scene(std::mt19937_64& rng, int size) {
    Scene scene;
    for (;;) {
        scene.mask = draw_shape_mask(rng, size);
        const double area = scene.mask.mean();
        if (area >= kMinForeground && area <= kMaxForeground) {
            break;
        }
    }
    std::array<double, 3> bg0{};
    std::array<double, 3> bg1{};
    std::array<double, 3> fg0{};
    std::array<double, 3> fg1{};
    for (int c = 0; c < 3; ++c) {
        bg0[c] = uniform(rng, 0.05, 0.45);
        bg1[c] = uniform(rng, 0.05, 0.45);
        fg0[c] = uniform(rng, 0.45, 0.95);
        fg1[c] = uniform(rng, 0.45, 0.95);
    }
    const double bg_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double fg_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    scene.clean = Tensor(Shape{1, 3, size, size});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size - 0.5;
            const double v = (y + 0.5) / size - 0.5;
            const double tb = std::clamp(0.5 + u * std::cos(bg_angle) + v * std::sin(bg_angle), 0.0, 1.0);
            const double tf = std::clamp(0.5 + u * std::cos(fg_angle) + v * std::sin(fg_angle), 0.0, 1.0);
            const bool fg = scene.mask.at(0, 0, y, x) > 0.5;
            for (int c = 0; c < 3; ++c) {
                scene.clean.at(0, c, y, x) =
                    fg ? fg0[c] + (fg1[c] - fg0[c]) * tf : bg0[c] + (bg1[c] - bg0[c]) * tb;
            }
        }
    }
    return scene;
}

} // namespace

void validate_degrade_params(const DegradeParams& p) {
    for (int c = 0; c < 3; ++c) {
        if (!(p.t[c] > 0.0 && p.t[c] <= 1.0)) {
            throw ConfigError("attenuation must lie in (0, 1]");
        }
        if (!(p.backscatter[c] >= 0.0 && p.backscatter[c] < 1.0)) {
            throw ConfigError("backscatter must lie in [0, 1)");
        }
    }
    if (!(p.blur_sigma >= 0.0) || !(p.noise_std >= 0.0)) {
        throw ConfigError("blur sigma and noise std must be non-negative");
    }
}

Image synth_degrade(const Image& clean, const DegradeParams& p) {
    validate_degrade_params(p);
    Tensor x = p.blur_sigma > 0.0 ? blur_planes(clean.tensor(), p.blur_sigma) : clean.tensor();
    const Shape s = x.shape();
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int c = 0; c < 3; ++c) {
        double* plane = x.ptr() + c * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
            double v = plane[i] * p.t[c] + p.backscatter[c] * (1.0 - p.t[c]);
            if (p.noise_std > 0.0) {
                v += p.noise_std * noise(rng);
            }
            plane[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return Image(std::move(x));
}

DegradeParams random_degrade_params(std::mt19937_64& rng) {
    DegradeParams p;
    p.t = {uniform(rng, 0.3, 0.6), uniform(rng, 0.6, 0.9), uniform(rng, 0.7, 0.95)};
    p.backscatter = {uniform(rng, 0.0, 0.1), uniform(rng, 0.2, 0.4), uniform(rng, 0.3, 0.5)};
    p.blur_sigma = uniform(rng, 0.0, 1.0);
    p.noise_std = uniform(rng, 0.0, 0.01);
    p.seed = rng();
    return p;
}

std::vector<Sample> synth_dataset(int n, int size, std::uint64_t seed) {
    if (n < 0 || size < kMinImageSide) {
        throw ConfigError("synth_dataset needs n >= 0 and size >= 16");
    }
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "synth_%04d", i);
        std::mt19937_64 rng(mix_seed(seed, id));
        Scene scene = draw_scene(rng, size);
        Image clean(std::move(scene.clean));
        const DegradeParams params = random_degrade_params(rng);
        Sample s{synth_degrade(clean, params), clean, SaliencyMask(std::move(scene.mask)), id};
        out.push_back(std::move(s));
    }
    return out;
}

Image load_png_image(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
    if (mat.empty()) {
        throw DecodeError("cannot decode image " + path);
    }
    return Image(from_mat_u8(mat));
}

SaliencyMask load_png_mask(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (mat.empty()) {
        throw DecodeError("cannot decode mask " + path);
    }
    return SaliencyMask(from_mat_u8(mat));
}

void save_png_image(const Image& image, const std::string& path) {
    write_png(to_mat_u8(image.tensor()), path);
}

void save_png_mask(const SaliencyMask& mask, const std::string& path) {
    write_png(to_mat_u8(mask.tensor()), path);
}

std::vector<Sample> load_dataset(const std::string& root) {
    const fs::path base(root);
    const auto inputs = png_stems(base / "input");
    const auto gts = png_stems(base / "gt");
    const auto masks = png_stems(base / "mask");
    std::set<std::string> all;
    all.insert(inputs.begin(), inputs.end());
    all.insert(gts.begin(), gts.end());
    all.insert(masks.begin(), masks.end());
    std::vector<Sample> out;
    for (const auto& id : all) {
        for (const auto* folder : {&inputs, &gts, &masks}) {
            if (folder->count(id) == 0) {
                const char* name = folder == &inputs ? "input" : folder == &gts ? "gt" : "mask";
                throw MissingPairError("sample " + id + " has no file in " + name + "/");
            }
        }
        Sample s;
        s.id = id;
        s.input = load_png_image((base / "input" / (id + ".png")).string());
        s.gt_image = load_png_image((base / "gt" / (id + ".png")).string());
        Tensor m = load_png_mask((base / "mask" / (id + ".png")).string()).tensor();
        for (auto& v : m.values()) {
            v = v >= 0.5 ? 1.0 : 0.0;
        }
        s.gt_mask = SaliencyMask(std::move(m));
        if (s.input.tensor().shape() != s.gt_image.tensor().shape()) {
            throw ShapeError("sample " + id + ": input and gt sizes differ");
        }
        require_aligned(s.input, s.gt_mask);
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& root) {
    const fs::path base(root);
    for (const auto& s : samples) {
        save_png_image(s.input, (base / "input" / (s.id + ".png")).string());
        save_png_image(s.gt_image, (base / "gt" / (s.id + ".png")).string());
        save_png_mask(s.gt_mask, (base / "mask" / (s.id + ".png")).string());
    }
}

namespace {

Tensor crop_flip(const Tensor& src, int y0, int x0, int patch, bool flip) {
    const Shape s = src.shape();
    Tensor out(Shape{1, s.c, patch, patch});
    for (int c = 0; c < s.c; ++c) {
        for (int y = 0; y < patch; ++y) {
            for (int x = 0; x < patch; ++x) {
                const int sx = flip ? x0 + patch - 1 - x : x0 + x;
                out.at(0, c, y, x) = src.at(0, c, y0 + y, sx);
            }
        }
    }
    return out;
}

} // namespace

Sample patchify(const Sample& sample, int patch, std::uint64_t seed) {
    const int h = sample.input.height();
    const int w = sample.input.width();
    if (patch < kMinImageSide || patch > h || patch > w) {
        throw ShapeError("patch " + std::to_string(patch) + " does not fit a " +
                         std::to_string(h) + "x" + std::to_string(w) + " sample");
    }
    std::mt19937_64 rng(seed);
    const int y0 = uniform_int(rng, 0, h - patch);
    const int x0 = uniform_int(rng, 0, w - patch);
    const bool flip = (rng() >> 63) != 0;
    Sample out;
    out.id = sample.id;
    out.input = Image(crop_flip(sample.input.tensor(), y0, x0, patch, flip));
    out.gt_image = Image(crop_flip(sample.gt_image.tensor(), y0, x0, patch, flip));
    out.gt_mask = SaliencyMask(crop_flip(sample.gt_mask.tensor(), y0, x0, patch, flip));
    return out;
}

} // namespace univ2d
