#include "univ2d/image.hpp"

#include "univ2d/errors.hpp"

#include <algorithm>

namespace univ2d {

namespace {

void require_unit_range(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw Error(std::string(what) + " values must lie in [0, 1]");
        }
    }
}

} // namespace

Image::Image(Tensor data) : data_(std::move(data)) {
    const Shape s = data_.shape();
    if (s.n != 1 || s.c != 3) {
        throw ShapeError("image must be [1,3,H,W], got " + s.str());
    }
    if (s.h < kMinImageSide || s.w < kMinImageSide) {
        throw ShapeError("image sides must be >= 16, got " + s.str());
    }
    require_unit_range(data_, "image");
}

SaliencyMask::SaliencyMask(Tensor data) : data_(std::move(data)) {
    const Shape s = data_.shape();
    if (s.n != 1 || s.c != 1) {
        throw ShapeError("mask must be [1,1,H,W], got " + s.str());
    }
    require_unit_range(data_, "mask");
}

bool SaliencyMask::is_binary() const {
    return std::all_of(data_.values().begin(), data_.values().end(),
                       [](double v) { return v == 0.0 || v == 1.0; });
}

void require_aligned(const Image& image, const SaliencyMask& mask) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ShapeError("image " + image.tensor().shape().str() + " and mask " +
                         mask.tensor().shape().str() + " are not aligned");
    }
}

} // namespace univ2d
