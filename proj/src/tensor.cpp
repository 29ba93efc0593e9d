#include "univ2d/tensor.hpp"

#include "univ2d/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace univ2d {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
    }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape s) const {
    if (s.numel() != numel()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    return Tensor(s, data_);
}

Tensor Tensor::sample(int i) const {
    if (i < 0 || i >= shape_.n) {
        throw ShapeError("sample index out of range");
    }
    const std::size_t per = numel() / static_cast<std::size_t>(shape_.n);
    Shape s = shape_;
    s.n = 1;
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(per * i);
    return Tensor(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
    if (items.empty()) {
        throw ShapeError("cannot stack an empty list");
    }
    Shape s = items.front().shape();
    std::vector<double> out;
    out.reserve(s.numel() * items.size());
    for (const auto& t : items) {
        Shape ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
            throw ShapeError("stack: mismatched shapes " + s.str() + " vs " + ts.str());
        }
        out.insert(out.end(), t.data_.begin(), t.data_.end());
    }
    s.n = static_cast<int>(out.size() / (static_cast<std::size_t>(s.c) * s.h * s.w));
    return Tensor(s, std::move(out));
}

double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(numel()); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

} // namespace univ2d
