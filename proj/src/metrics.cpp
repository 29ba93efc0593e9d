#include "univ2d/metrics.hpp"

#include "univ2d/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace univ2d {

namespace {

// Machine epsilon as used by the reference saliency toolboxes.
constexpr double kEps = 2.220446049250313e-16;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
    }
}

/// A single-channel map as a row-major H x W view with binarized gt.
struct MapPair {
    int h = 0;
    int w = 0;
    std::vector<double> pred;
    std::vector<char> gt;
};

MapPair as_map_pair(const Tensor& pred, const Tensor& gt, const char* what) {
    require_same_shape(pred, gt, what);
    const Shape s = pred.shape();
    if (s.n != 1 || s.c != 1) {
        throw ShapeError(std::string(what) + " expects a single [1,1,H,W] map, got " + s.str());
    }
    MapPair m;
    m.h = s.h;
    m.w = s.w;
    m.pred.assign(pred.values().begin(), pred.values().end());
    m.gt.resize(gt.numel());
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        m.gt[i] = gt[i] >= 0.5 ? 1 : 0;
    }
    return m;
}

double mean_of(const std::vector<char>& v) {
    double s = 0.0;
    for (char c : v) {
        s += c;
    }
    return s / static_cast<double>(v.size());
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

// ---- S-measure ----

double object_score(const std::vector<double>& values) {
    if (values.empty()) {
        return 0.0;
    }
    const double n = static_cast<double>(values.size());
    const double mu = mean_of(values);
    double sigma = 0.0;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - mu) * (v - mu);
        }
        sigma = std::sqrt(ss / (n - 1.0));
    }
    return 2.0 * mu / (mu * mu + 1.0 + sigma + kEps);
}

double s_object(const MapPair& m) {
    std::vector<double> fg;
    std::vector<double> bg;
    for (std::size_t i = 0; i < m.pred.size(); ++i) {
        if (m.gt[i]) {
            fg.push_back(m.pred[i]);
        } else {
            bg.push_back(1.0 - m.pred[i]);
        }
    }
    const double u = mean_of(m.gt);
    return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

/// Rounds half away from zero.
int round_half_away(double v) { return static_cast<int>(std::lround(v)); }

double region_ssim(const MapPair& m, int y0, int y1, int x0, int x1) {
    const int rows = y1 - y0;
    const int cols = x1 - x0;
    const double n = static_cast<double>(rows) * cols;
    double mx = 0.0;
    double my = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
            mx += m.pred[i];
            my += m.gt[i];
        }
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
            const double dx = m.pred[i] - mx;
            const double dy = m.gt[i] - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    const double denom = n - 1.0 + kEps;
    sxx /= denom;
    syy /= denom;
    sxy /= denom;
    const double alpha = 4.0 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sxx + syy);
    if (alpha != 0.0) {
        return alpha / (beta + kEps);
    }
    return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const MapPair& m) {
    // Centroid in 1-based pixel coordinates; the split is after column X and
    // after row Y.
    double total = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            if (m.gt[static_cast<std::size_t>(y) * m.w + x]) {
                total += 1.0;
                sx += x + 1;
                sy += y + 1;
            }
        }
    }
    int cx = 0;
    int cy = 0;
    if (total == 0.0) {
        cx = round_half_away(m.w / 2.0);
        cy = round_half_away(m.h / 2.0);
    } else {
        cx = round_half_away(sx / total);
        cy = round_half_away(sy / total);
    }
    const double area = static_cast<double>(m.w) * m.h;
    const double w1 = static_cast<double>(cx) * cy / area;
    const double w2 = static_cast<double>(m.w - cx) * cy / area;
    const double w3 = static_cast<double>(cx) * (m.h - cy) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    auto quadrant = [&](double weight, int y0, int y1, int x0, int x1) {
        if (y1 <= y0 || x1 <= x0) {
            return 0.0;
        }
        return weight * region_ssim(m, y0, y1, x0, x1);
    };
    return quadrant(w1, 0, cy, 0, cx) + quadrant(w2, 0, cy, cx, m.w) +
           quadrant(w3, cy, m.h, 0, cx) + quadrant(w4, cy, m.h, cx, m.w);
}

// ---- weighted F-measure ----

std::vector<double> gaussian_kernel_2d(int size, double sigma) {
    const int r = size / 2;
    std::vector<double> k(static_cast<std::size_t>(size) * size);
    double total = 0.0;
    for (int y = -r; y <= r; ++y) {
        for (int x = -r; x <= r; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
            total += v;
        }
    }
    for (double& v : k) {
        v /= total;
    }
    return k;
}

/// Zero-padded "same" correlation.
std::vector<double> filter_same(const std::vector<double>& src, int h, int w,
                                const std::vector<double>& k, int size) {
    const int r = size / 2;
    std::vector<double> out(src.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) {
                    continue;
                }
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) {
                        continue;
                    }
                    acc += k[static_cast<std::size_t>(dy + r) * size + (dx + r)] *
                           src[static_cast<std::size_t>(yy) * w + xx];
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

struct NearestForeground {
    std::vector<double> distance;
    std::vector<std::size_t> index;
};

/// Euclidean distance to the nearest foreground pixel. Ties resolve to the
/// smallest row-major index. Requires at least one foreground pixel.
NearestForeground nearest_foreground(const std::vector<char>& fg, int h, int w) {
    constexpr int kNone = -1;
    // Per row: nearest foreground column for every column (smaller column on ties).
    std::vector<int> nearest_col(fg.size(), kNone);
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        int last = kNone;
        std::vector<int> left(static_cast<std::size_t>(w), kNone);
        for (int x = 0; x < w; ++x) {
            if (fg[row + x]) {
                last = x;
            }
            left[static_cast<std::size_t>(x)] = last;
        }
        int next = kNone;
        for (int x = w - 1; x >= 0; --x) {
            if (fg[row + x]) {
                next = x;
            }
            const int l = left[static_cast<std::size_t>(x)];
            int best = l;
            if (next != kNone && (l == kNone || next - x < x - l)) {
                best = next;
            }
            nearest_col[row + x] = best;
        }
    }
    NearestForeground out;
    out.distance.resize(fg.size());
    out.index.resize(fg.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            long long best_d2 = std::numeric_limits<long long>::max();
            std::size_t best_idx = 0;
            for (int r = 0; r < h; ++r) {
                const int c = nearest_col[static_cast<std::size_t>(r) * w + x];
                if (c == kNone) {
                    continue;
                }
                const long long d2 = static_cast<long long>(y - r) * (y - r) +
                                     static_cast<long long>(x - c) * (x - c);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best_idx = static_cast<std::size_t>(r) * w + c;
                }
            }
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            out.distance[i] = std::sqrt(static_cast<double>(best_d2));
            out.index[i] = best_idx;
        }
    }
    return out;
}

} // namespace

std::vector<double> gaussian_kernel_1d(int size, double sigma) {
    const int r = size / 2;
    std::vector<double> k(static_cast<std::size_t>(size));
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - r;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) {
        v /= total;
    }
    return k;
}

ag::Var ssim_var(const ag::Var& a, const ag::Var& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("ssim: " + a.shape().str() + " vs " + b.shape().str());
    }
    const Shape s = a.shape();
    if (s.h < kSsimWindow || s.w < kSsimWindow) {
        throw TooSmallError("ssim needs sides >= " + std::to_string(kSsimWindow) + ", got " +
                            s.str());
    }
    static const std::vector<double> kernel = gaussian_kernel_1d(kSsimWindow, kSsimSigma);
    auto f = [](const ag::Var& x) { return ag::separable_filter_valid(x, kernel); };
    ag::Var mu_a = f(a);
    ag::Var mu_b = f(b);
    ag::Var mu_aa = ag::square(mu_a);
    ag::Var mu_bb = ag::square(mu_b);
    ag::Var mu_ab = mu_a * mu_b;
    ag::Var var_a = f(ag::square(a)) - mu_aa;
    ag::Var var_b = f(ag::square(b)) - mu_bb;
    ag::Var cov = f(a * b) - mu_ab;
    ag::Var num = ag::add_scalar(ag::scale(mu_ab, 2.0), kSsimC1) *
                  ag::add_scalar(ag::scale(cov, 2.0), kSsimC2);
    ag::Var den = ag::add_scalar(mu_aa + mu_bb, kSsimC1) * ag::add_scalar(var_a + var_b, kSsimC2);
    return ag::mean_all(num / den);
}

double psnr(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - gt[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.numel());
    if (mse < 1e-10) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "ssim");
    return ssim_var(ag::Var::constant(pred), ag::Var::constant(gt)).value()[0];
}

double mae(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        s += std::abs(pred[i] - gt[i]);
    }
    return s / static_cast<double>(pred.numel());
}

double s_measure(const Tensor& pred, const Tensor& gt) {
    const MapPair m = as_map_pair(pred, gt, "s_measure");
    const double y = mean_of(m.gt);
    if (y == 0.0) {
        return 1.0 - mean_of(m.pred);
    }
    if (y == 1.0) {
        return mean_of(m.pred);
    }
    const double q = 0.5 * s_object(m) + 0.5 * s_region(m);
    return std::max(0.0, q);
}

double weighted_f_measure(const Tensor& pred, const Tensor& gt) {
    const MapPair m = as_map_pair(pred, gt, "weighted_f_measure");
    const std::size_t n = m.pred.size();
    double fg_count = 0.0;
    for (char g : m.gt) {
        fg_count += g;
    }
    if (fg_count == 0.0) {
        return 0.0;
    }
    std::vector<double> err(n);
    for (std::size_t i = 0; i < n; ++i) {
        err[i] = std::abs(m.pred[i] - m.gt[i]);
    }
    const NearestForeground nf = nearest_foreground(m.gt, m.h, m.w);
    std::vector<double> et = err;
    for (std::size_t i = 0; i < n; ++i) {
        if (!m.gt[i]) {
            et[i] = err[nf.index[i]];
        }
    }
    static const std::vector<double> kernel = gaussian_kernel_2d(7, 5.0);
    const std::vector<double> ea = filter_same(et, m.h, m.w, kernel, 7);
    double fg_weighted_err = 0.0;
    double bg_weighted_err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (m.gt[i]) {
            fg_weighted_err += std::min(err[i], ea[i]);
        } else {
            const double b = 2.0 - std::exp(std::log(0.5) / 5.0 * nf.distance[i]);
            bg_weighted_err += err[i] * b;
        }
    }
    const double tp = fg_count - fg_weighted_err;
    const double fp = bg_weighted_err;
    const double recall = 1.0 - fg_weighted_err / fg_count;
    const double precision = tp / (kEps + tp + fp);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

double e_measure_binary(const Tensor& binary_pred, const Tensor& gt) {
    const MapPair m = as_map_pair(binary_pred, gt, "e_measure");
    const std::size_t n = m.pred.size();
    std::vector<double> fm(n);
    for (std::size_t i = 0; i < n; ++i) {
        fm[i] = m.pred[i] >= 0.5 ? 1.0 : 0.0;
    }
    const double mu_gt = mean_of(m.gt);
    double total = 0.0;
    if (mu_gt == 0.0) {
        for (double v : fm) {
            total += 1.0 - v;
        }
    } else if (mu_gt == 1.0) {
        for (double v : fm) {
            total += v;
        }
    } else {
        const double mu_fm = mean_of(fm);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = fm[i] - mu_fm;
            const double g = m.gt[i] - mu_gt;
            const double align = 2.0 * g * a / (g * g + a * a + kEps);
            total += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return total / static_cast<double>(n);
}

double e_measure(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "e_measure");
    double best = 0.0;
    Tensor binary(pred.shape());
    for (int k = 0; k < kEMeasureThresholds; ++k) {
        const double t = static_cast<double>(k) / (kEMeasureThresholds - 1);
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            binary[i] = pred[i] >= t ? 1.0 : 0.0;
        }
        best = std::max(best, e_measure_binary(binary, gt));
    }
    return best;
}

MetricRow MetricReport::mean() const {
    MetricRow m;
    m.filename = "MEAN";
    if (rows.empty()) {
        return m;
    }
    for (const auto& r : rows) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.s_measure += r.s_measure;
        m.weighted_f += r.weighted_f;
        m.e_measure += r.e_measure;
        m.mae += r.mae;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.s_measure /= n;
    m.weighted_f /= n;
    m.e_measure /= n;
    m.mae /= n;
    return m;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < kMetricColumns.size(); ++i) {
        os << (i ? "," : "") << kMetricColumns[i];
    }
    os << '\n';
    auto emit = [&os](const MetricRow& r) {
        os << r.filename << ',' << r.psnr << ',' << r.ssim << ',' << r.s_measure << ','
           << r.weighted_f << ',' << r.e_measure << ',' << r.mae << '\n';
    };
    for (const auto& r : rows) {
        emit(r);
    }
    emit(mean());
    return os.str();
}

void MetricReport::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write report " + path);
    }
    out << to_csv();
}

MetricReport MetricReport::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read report " + path);
    }
    MetricReport report;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != kMetricColumns.size()) {
            throw Error("malformed report line: " + line);
        }
        if (cells[0] == "MEAN") {
            continue;
        }
        MetricRow r;
        r.filename = cells[0];
        r.psnr = std::stod(cells[1]);
        r.ssim = std::stod(cells[2]);
        r.s_measure = std::stod(cells[3]);
        r.weighted_f = std::stod(cells[4]);
        r.e_measure = std::stod(cells[5]);
        r.mae = std::stod(cells[6]);
        report.rows.push_back(r);
    }
    return report;
}

} // namespace univ2d
