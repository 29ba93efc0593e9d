#pragma once

#include "univ2d/autograd.hpp"
#include "univ2d/tensor.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace univ2d {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;
inline constexpr int kEMeasureThresholds = 256;

/// Normalized 1-D Gaussian taps centered on the middle sample.
std::vector<double> gaussian_kernel_1d(int size, double sigma);

/// Mean local SSIM over an 11x11 Gaussian window (valid region), averaged
/// over channels and batch. Differentiable. Throws TooSmallError if either
/// spatial side is below the window size.
ag::Var ssim_var(const ag::Var& a, const ag::Var& b);

double psnr(const Tensor& pred, const Tensor& gt);
double ssim(const Tensor& pred, const Tensor& gt);
double mae(const Tensor& pred, const Tensor& gt);

// Saliency metrics take single maps ([1,1,H,W]). Ground truth is binarized
// at 0.5.

/// Structure measure, 0.5 * object + 0.5 * region, clamped to >= 0.
/// Degenerate ground truth: all background scores 1 - mean(pred), all
/// foreground scores mean(pred).
double s_measure(const Tensor& pred, const Tensor& gt);

/// Weighted F-measure with beta^2 = 1 (7x7 Gaussian, sigma 5, zero-padded
/// filtering). An all-background ground truth scores 0.
double weighted_f_measure(const Tensor& pred, const Tensor& gt);

/// Enhanced-alignment score of a binary prediction.
double e_measure_binary(const Tensor& binary_pred, const Tensor& gt);
/// Maximum of e_measure_binary over thresholds k/255, k = 0..255, with
/// pred >= t counted as foreground.
double e_measure(const Tensor& pred, const Tensor& gt);

struct MetricRow {
    std::string filename;
    double psnr = 0.0;
    double ssim = 0.0;
    double s_measure = 0.0;
    double weighted_f = 0.0;
    double e_measure = 0.0;
    double mae = 0.0;

    friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Column names in CSV order. Reserved names for no-reference colour metrics
/// are listed separately and not emitted.
inline constexpr std::array<std::string_view, 7> kMetricColumns{
    "filename", "psnr", "ssim", "s_measure", "weighted_f", "e_measure", "mae"};
inline constexpr std::array<std::string_view, 3> kReservedMetricColumns{"uiqm", "uciqe", "pcqi"};

struct MetricReport {
    std::vector<MetricRow> rows;

    /// Arithmetic mean of every column, filename "MEAN".
    [[nodiscard]] MetricRow mean() const;
    /// Header, one line per row, then the MEAN line. Values use 17
    /// significant digits so the text round-trips.
    [[nodiscard]] std::string to_csv() const;
    void write_csv(const std::string& path) const;
    /// Parses a CSV written by to_csv; the MEAN row is dropped.
    static MetricReport read_csv(const std::string& path);
};

} // namespace univ2d
