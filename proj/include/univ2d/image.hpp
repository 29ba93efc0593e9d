#pragma once

#include "univ2d/tensor.hpp"

namespace univ2d {

inline constexpr int kMinImageSide = 16;

/// RGB image stored as a [1, 3, H, W] tensor with values in [0, 1].
class Image {
public:
    Image() = default;
    /// Validates channel count, range and minimum size; throws ShapeError or Error.
    explicit Image(Tensor data);

    [[nodiscard]] const Tensor& tensor() const { return data_; }
    [[nodiscard]] int height() const { return data_.shape().h; }
    [[nodiscard]] int width() const { return data_.shape().w; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    Tensor data_;
};

/// Single-channel map stored as [1, 1, H, W] with values in [0, 1].
class SaliencyMask {
public:
    SaliencyMask() = default;
    explicit SaliencyMask(Tensor data);

    [[nodiscard]] const Tensor& tensor() const { return data_; }
    [[nodiscard]] int height() const { return data_.shape().h; }
    [[nodiscard]] int width() const { return data_.shape().w; }
    [[nodiscard]] bool is_binary() const;

    friend bool operator==(const SaliencyMask&, const SaliencyMask&) = default;

private:
    Tensor data_;
};

/// Throws ShapeError unless the two share H and W.
void require_aligned(const Image& image, const SaliencyMask& mask);

} // namespace univ2d
