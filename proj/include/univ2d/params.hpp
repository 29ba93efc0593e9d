#pragma once

#include "univ2d/autograd.hpp"
#include "univ2d/config.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace univ2d {

enum class InitKind { kaiming_uniform, zeros, ones };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init = InitKind::zeros;
    int fan_in = 1;
};

struct BufferSpec {
    std::string name;
    Shape shape;
    double fill = 0.0;
};

/// Declarative list of every learnable array and buffer a model needs.
class ParamSpecList {
public:
    void add(ParamSpec spec);
    void add_buffer(BufferSpec spec);

    [[nodiscard]] const std::vector<ParamSpec>& params() const { return params_; }
    [[nodiscard]] const std::vector<BufferSpec>& buffers() const { return buffers_; }

private:
    std::vector<ParamSpec> params_;
    std::vector<BufferSpec> buffers_;
};

/// Named learnable arrays plus non-learnable buffers (normalization running
/// statistics). Copies are deep. Single writer: only the optimizer (and
/// training-mode normalization) mutates values.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    void add_param(const std::string& name, Tensor value);
    void add_buffer(const std::string& name, Tensor value);

    [[nodiscard]] bool has_param(const std::string& name) const { return params_.count(name) != 0; }
    [[nodiscard]] bool has_buffer(const std::string& name) const {
        return buffers_.count(name) != 0;
    }
    [[nodiscard]] const ag::Var& param(const std::string& name) const;
    [[nodiscard]] ag::Var& param(const std::string& name);
    [[nodiscard]] Tensor& buffer(const std::string& name);
    [[nodiscard]] const Tensor& buffer(const std::string& name) const;

    [[nodiscard]] const std::map<std::string, ag::Var>& params() const { return params_; }
    [[nodiscard]] std::map<std::string, ag::Var>& params() { return params_; }
    [[nodiscard]] const std::map<std::string, Tensor>& buffers() const { return buffers_; }

    void zero_grad();
    [[nodiscard]] std::size_t parameter_count() const;
    [[nodiscard]] bool all_finite() const;
    /// Parameter names starting with `prefix`.
    [[nodiscard]] std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    /// Bit-exact equality of all parameter values and buffers.
    friend bool operator==(const ParamStore& a, const ParamStore& b);

private:
    std::map<std::string, ag::Var> params_;
    std::map<std::string, Tensor> buffers_;
};

/// Materializes specs. Kernels get fan-in scaled uniform values
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)); each array draws from its own stream
/// keyed by (seed, name), so shared layers initialize identically across
/// ablation variants.
ParamStore init_params(const ParamSpecList& specs, std::uint64_t seed);

/// Every parameter of the full model for `config` (validated first).
ParamSpecList model_param_specs(const ModelConfig& config);

/// init_params(model_param_specs(config), config.seed).
ParamStore init_params(const ModelConfig& config);

/// Stable 64-bit mixing used for per-array streams.
std::uint64_t mix_seed(std::uint64_t seed, const std::string& name);

} // namespace univ2d
