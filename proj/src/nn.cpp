#include "univ2d/nn.hpp"

#include "univ2d/errors.hpp"

namespace univ2d::nn {

void declare_conv(ParamSpecList& specs, const std::string& name, int cin, int cout, int k,
                  bool bias) {
    specs.add({name + ".w", Shape{cout, cin, k, k}, InitKind::kaiming_uniform, cin * k * k});
    if (bias) {
        specs.add({name + ".b", Shape{1, cout, 1, 1}, InitKind::zeros, 1});
    }
}

void declare_bn(ParamSpecList& specs, const std::string& name, int channels) {
    specs.add({name + ".gamma", Shape{1, channels, 1, 1}, InitKind::ones, 1});
    specs.add({name + ".beta", Shape{1, channels, 1, 1}, InitKind::zeros, 1});
    specs.add_buffer({name + ".running_mean", Shape{1, channels, 1, 1}, 0.0});
    specs.add_buffer({name + ".running_var", Shape{1, channels, 1, 1}, 1.0});
}

void declare_cbr(ParamSpecList& specs, const std::string& name, int cin, int cout, int k) {
    declare_conv(specs, name + ".conv", cin, cout, k);
    declare_bn(specs, name + ".bn", cout);
}

void declare_res_up(ParamSpecList& specs, const std::string& name, int cin, int cout) {
    declare_cbr(specs, name + ".main", cin, cout, 3);
    declare_conv(specs, name + ".skip", cin, cout, 1);
}

void declare_res_down(ParamSpecList& specs, const std::string& name, int cin, int cout) {
    declare_cbr(specs, name + ".main", cin, cout, 3);
    declare_conv(specs, name + ".skip", cin, cout, 1);
}

void declare_res_block(ParamSpecList& specs, const std::string& name, int channels) {
    declare_cbr(specs, name + ".c1", channels, channels, 3);
    declare_cbr(specs, name + ".c2", channels, channels, 3);
}

ag::Var conv(Context& ctx, const std::string& name, const ag::Var& x, int stride) {
    const ag::Var& w = ctx.param(name + ".w");
    const std::string bias_name = name + ".b";
    ag::Var b = ctx.has_param(bias_name) ? ctx.param(bias_name) : ag::Var{};
    const int k = w.shape().h;
    return ag::conv2d(x, w, b, stride, k / 2);
}

ag::Var bn(Context& ctx, const std::string& name, const ag::Var& x) {
    ParamStore& store = ctx.params();
    ag::BatchNormBuffers buffers{&store.buffer(name + ".running_mean"),
                                 &store.buffer(name + ".running_var")};
    const bool training = ctx.mode().training && !ctx.mode().linear_probe;
    return ag::batch_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"), buffers,
                          training, kBatchNormMomentum, kBatchNormEps);
}

ag::Var relu(Context& ctx, const ag::Var& x) {
    return ctx.mode().linear_probe ? x : ag::relu(x);
}

ag::Var cbr(Context& ctx, const std::string& name, const ag::Var& x, int stride) {
    return relu(ctx, bn(ctx, name + ".bn", conv(ctx, name + ".conv", x, stride)));
}

ag::Var res_up(Context& ctx, const std::string& name, const ag::Var& x, int factor) {
    const Shape s = x.shape();
    ag::Var up = ag::resize_bilinear(x, s.h * factor, s.w * factor);
    return cbr(ctx, name + ".main", up) + conv(ctx, name + ".skip", up);
}

ag::Var res_down(Context& ctx, const std::string& name, const ag::Var& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw ShapeError("res_down needs even spatial dims, got " + s.str());
    }
    ag::Var main = cbr(ctx, name + ".main", x, 2);
    ag::Var pooled = ag::resize_bilinear(x, s.h / 2, s.w / 2);
    return main + conv(ctx, name + ".skip", pooled);
}

ag::Var res_block(Context& ctx, const std::string& name, const ag::Var& x) {
    return x + cbr(ctx, name + ".c2", cbr(ctx, name + ".c1", x));
}

} // namespace univ2d::nn
