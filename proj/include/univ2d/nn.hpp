#pragma once

// Layer building blocks shared by the encoder and decoder branches.
//
// Every block comes in two halves: `declare_*` adds its parameters to a
// ParamSpecList, and the forward function of the same name reads them back
// from the store through a Context.

#include "univ2d/autograd.hpp"
#include "univ2d/params.hpp"

#include <string>

namespace univ2d {

struct Mode {
    /// Batch statistics and running-average updates in normalization layers.
    bool training = false;
    /// Test hook: ReLU becomes the identity and normalization uses running
    /// statistics, so blocks with zero biases are exactly linear.
    bool linear_probe = false;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

class Context {
public:
    Context(ParamStore& params, Mode mode) : params_(&params), mode_(mode) {}

    [[nodiscard]] const ag::Var& param(const std::string& name) const {
        return params_->param(name);
    }
    [[nodiscard]] bool has_param(const std::string& name) const {
        return params_->has_param(name);
    }
    [[nodiscard]] ParamStore& params() { return *params_; }
    [[nodiscard]] const Mode& mode() const { return mode_; }

private:
    ParamStore* params_;
    Mode mode_;
};

namespace nn {

void declare_conv(ParamSpecList& specs, const std::string& name, int cin, int cout, int k,
                  bool bias = true);
void declare_bn(ParamSpecList& specs, const std::string& name, int channels);
/// conv -> batch norm -> ReLU
void declare_cbr(ParamSpecList& specs, const std::string& name, int cin, int cout, int k);
/// Bilinear upsampling, then a 3x3 CBR main path plus a 1x1 projection path.
void declare_res_up(ParamSpecList& specs, const std::string& name, int cin, int cout);
/// Stride-2 3x3 CBR main path plus 1x1 projection of the 2x2-averaged input.
void declare_res_down(ParamSpecList& specs, const std::string& name, int cin, int cout);
/// Two 3x3 CBR layers with an identity skip.
void declare_res_block(ParamSpecList& specs, const std::string& name, int channels);

/// Convolution with "same" padding (k/2); kernel size comes from the weight.
ag::Var conv(Context& ctx, const std::string& name, const ag::Var& x, int stride = 1);
ag::Var bn(Context& ctx, const std::string& name, const ag::Var& x);
ag::Var relu(Context& ctx, const ag::Var& x);
ag::Var cbr(Context& ctx, const std::string& name, const ag::Var& x, int stride = 1);
ag::Var res_up(Context& ctx, const std::string& name, const ag::Var& x, int factor);
ag::Var res_down(Context& ctx, const std::string& name, const ag::Var& x);
ag::Var res_block(Context& ctx, const std::string& name, const ag::Var& x);

} // namespace nn
} // namespace univ2d
