#include "univ2d/params.hpp"

#include "univ2d/errors.hpp"

#include <cmath>
#include <random>

namespace univ2d {

void ParamSpecList::add(ParamSpec spec) { params_.push_back(std::move(spec)); }

void ParamSpecList::add_buffer(BufferSpec spec) { buffers_.push_back(std::move(spec)); }

ParamStore::ParamStore(const ParamStore& other) : buffers_(other.buffers_) {
    for (const auto& [name, var] : other.params_) {
        params_.emplace(name, var.detached_copy());
    }
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        ParamStore tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void ParamStore::add_param(const std::string& name, Tensor value) {
    if (!params_.emplace(name, ag::Var::leaf(std::move(value), true)).second) {
        throw Error("duplicate parameter name: " + name);
    }
}

void ParamStore::add_buffer(const std::string& name, Tensor value) {
    if (!buffers_.emplace(name, std::move(value)).second) {
        throw Error("duplicate buffer name: " + name);
    }
}

const ag::Var& ParamStore::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw Error("unknown parameter: " + name);
    }
    return it->second;
}

ag::Var& ParamStore::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw Error("unknown parameter: " + name);
    }
    return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) {
        throw Error("unknown buffer: " + name);
    }
    return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) {
        throw Error("unknown buffer: " + name);
    }
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [_, v] : params_) {
        v.zero_grad();
    }
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) {
        n += v.value().numel();
    }
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& [_, v] : params_) {
        if (!v.value().all_finite()) {
            return false;
        }
    }
    for (const auto& [_, t] : buffers_) {
        if (!t.all_finite()) {
            return false;
        }
    }
    return true;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
        if (name.rfind(prefix, 0) == 0) {
            out.push_back(name);
        }
    }
    return out;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size() || a.buffers_ != b.buffers_) {
        return false;
    }
    auto ia = a.params_.begin();
    auto ib = b.params_.begin();
    for (; ia != a.params_.end(); ++ia, ++ib) {
        if (ia->first != ib->first || !(ia->second.value() == ib->second.value())) {
            return false;
        }
    }
    return true;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& name) {
    // FNV-1a over the name, then a splitmix64 finalizer with the seed.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = h ^ (seed + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ParamStore init_params(const ParamSpecList& specs, std::uint64_t seed) {
    ParamStore store;
    for (const auto& spec : specs.params()) {
        Tensor t(spec.shape, 0.0);
        switch (spec.init) {
        case InitKind::zeros: break;
        case InitKind::ones: t.fill(1.0); break;
        case InitKind::kaiming_uniform: {
            std::mt19937_64 rng(mix_seed(seed, spec.name));
            const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
            for (auto& v : t.values()) {
                // 53 random mantissa bits -> [0, 1), independent of <random> distributions.
                const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
                v = -bound + 2.0 * bound * u;
            }
            break;
        }
        }
        store.add_param(spec.name, std::move(t));
    }
    for (const auto& spec : specs.buffers()) {
        store.add_buffer(spec.name, Tensor(spec.shape, spec.fill));
    }
    return store;
}

ParamStore init_params(const ModelConfig& config) {
    return init_params(model_param_specs(config), config.seed);
}

} // namespace univ2d
