#pragma once

#include "univ2d/image.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace univ2d {

struct Sample {
    Image input;
    Image gt_image;
    SaliencyMask gt_mask;
    std::string id;
};

/// Per-channel (R, G, B) attenuation and backscatter plus blur and noise.
struct DegradeParams {
    std::array<double, 3> t{1.0, 1.0, 1.0};
    std::array<double, 3> backscatter{0.0, 0.0, 0.0};
    double blur_sigma = 0.0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

/// Throws ConfigError unless t in (0,1], backscatter in [0,1), blur and noise >= 0.
void validate_degrade_params(const DegradeParams& p);

/// clamp(blur(clean) * t + B * (1 - t) + noise, 0, 1), noise seeded by p.seed.
Image synth_degrade(const Image& clean, const DegradeParams& p);

/// Draws a water-like colour cast: red attenuated most, blue least.
DegradeParams random_degrade_params(std::mt19937_64& rng);

/// Foreground covers between these fractions of the image.
inline constexpr double kMinForeground = 0.05;
inline constexpr double kMaxForeground = 0.60;

/// `n` samples of size x size: a gradient background with one ellipse or
/// polygon foreground and its exact binary mask. Ids are "synth_0000", ...
std::vector<Sample> synth_dataset(int n, int size, std::uint64_t seed);

// ---- PNG interchange ----

/// 8-bit RGB. Throws DecodeError if the file cannot be decoded.
Image load_png_image(const std::string& path);
/// 8-bit gray, values / 255 (not binarized).
SaliencyMask load_png_mask(const std::string& path);
void save_png_image(const Image& image, const std::string& path);
void save_png_mask(const SaliencyMask& mask, const std::string& path);

/// Reads root/input/<id>.png, root/gt/<id>.png and root/mask/<id>.png, sorted
/// by id. Masks are binarized at 0.5. Throws MissingPairError when an id is
/// absent from one of the folders.
std::vector<Sample> load_dataset(const std::string& root);
void save_dataset(const std::vector<Sample>& samples, const std::string& root);

/// Identical random crop of side `patch` on all three arrays, then a
/// horizontal flip with probability 0.5. Throws ShapeError if the patch does
/// not fit.
Sample patchify(const Sample& sample, int patch, std::uint64_t seed);

} // namespace univ2d
