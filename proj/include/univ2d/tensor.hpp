#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace univ2d {

/// Dense 4-D shape in NCHW order.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Owning NCHW array of doubles. Value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t numel() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] double* ptr() { return data_.data(); }
    [[nodiscard]] const double* ptr() const { return data_.data(); }
    [[nodiscard]] std::span<double> values() { return data_; }
    [[nodiscard]] std::span<const double> values() const { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const { return data_; }

    [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    [[nodiscard]] double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void fill(double v);
    /// Reinterprets the storage with a new shape of identical element count.
    [[nodiscard]] Tensor reshaped(Shape s) const;

    /// Copies sample `i` out of a batch as a [1, C, H, W] tensor.
    [[nodiscard]] Tensor sample(int i) const;
    /// Stacks [1, C, H, W] tensors of identical shape along the batch axis.
    [[nodiscard]] static Tensor stack(std::span<const Tensor> items);

    [[nodiscard]] double min() const;
    [[nodiscard]] double max() const;
    [[nodiscard]] double sum() const;
    [[nodiscard]] double mean() const;
    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

} // namespace univ2d
