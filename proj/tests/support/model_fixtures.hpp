#pragma once

#include "test_utils.hpp"
#include "univ2d/config.hpp"
#include "univ2d/nn.hpp"
#include "univ2d/params.hpp"

#include <gtest/gtest.h>

#include <string>

namespace univ2d::testing {

/// Fills every parameter whose name starts with `prefix` with `value`.
inline void fill_params(ParamStore& store, const std::string& prefix, double value) {
    for (const auto& name : store.names_with_prefix(prefix)) {
        store.param(name).mutable_value().fill(value);
    }
}

inline void set_param(ParamStore& store, const std::string& name, std::vector<double> values) {
    Tensor& t = store.param(name).mutable_value();
    ASSERT_EQ(t.numel(), values.size()) << name;
    for (std::size_t i = 0; i < values.size(); ++i) {
        t[i] = values[i];
    }
}

/// A [N,3,H,W] image batch in [0,1].
inline ag::Var random_images(int n, int h, int w, std::uint64_t seed) {
    return ag::Var::constant(random_tensor(Shape{n, 3, h, w}, seed, 0.0, 1.0));
}

inline ModelConfig four_level_config() {
    ModelConfig c;
    c.levels = 4;
    c.channels = {32, 64, 128, 256};
    return c;
}

} // namespace univ2d::testing
