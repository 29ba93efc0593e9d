#pragma once

// Reverse-mode automatic differentiation over NCHW tensors.
//
// A Var is a cheap handle to a graph node. Operations record a backward
// closure only when at least one input requires a gradient, so constant
// subgraphs (targets, frozen feature extractors) cost a plain forward pass.

#include "univ2d/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace univ2d::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

class Var {
public:
    Var() = default;

    static Var leaf(Tensor value, bool requires_grad);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Tensor& value() const { return node_->value; }
    /// Mutable access for optimizers and finite-difference probes; never call
    /// on a non-leaf node that is part of a live graph.
    [[nodiscard]] Tensor& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor& grad() const { return node_->grad; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] Node* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node>& handle() const { return node_; }

    void zero_grad();
    /// Deep copy of the value as a fresh leaf.
    [[nodiscard]] Var detached_copy() const;

    static Var from_node(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

/// Back-propagates from a scalar root (shape [1,1,1,1]) seeded with 1.
void backward(const Var& root);

/// Builds a result node; `fn` is stored only if some input requires grad.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

// ---- elementwise binary ops with NCHW broadcasting (each dim equal or 1) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// ---- scalar and unary ops ----
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var one_minus(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// [N,C,H,W] -> [N,C,1,1]
Var sum_spatial(const Var& a);
/// [N,C,H,W] -> [N,1,1,1]
Var sum_per_sample(const Var& a);
/// [N,1,1,1] or [N,C,1,1] -> [N,C,H,W]
Var expand(const Var& a, Shape target);

// ---- structural ops ----
Var concat_channels(std::span<const Var> parts);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& a, int begin, int end);

// ---- spatial ops ----
/// 2-D cross-correlation with zero padding. `weight` is [Cout, Cin, K, K];
/// `bias` may be undefined or [1, Cout, 1, 1].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
/// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
/// Depthwise separable filtering with a fixed 1-D kernel, valid region only.
Var separable_filter_valid(const Var& x, std::span<const double> kernel);

struct BatchNormBuffers {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
};

/// Batch normalization over (N, H, W) per channel. In training mode uses batch
/// statistics and updates the running buffers (unbiased variance); otherwise
/// uses the running buffers.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers,
               bool training, double momentum, double eps);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

} // namespace univ2d::ag
