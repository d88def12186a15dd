#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/tensor.hpp"

namespace t3d {

/// Adam moments and hyperparameters for an ordered list of parameters.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction over `params`, reading each parameter's
/// accumulated gradient (a missing gradient counts as zero).
///
/// The state is sized on first use; parameter order must stay fixed afterwards.
template <typename T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state) {
    if (!(state.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].value.numel(), T(0));
            state.v[i].assign(params[i].value.numel(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].value.numel())
            throw DimensionError("adam: moment buffers do not match parameter " + params[i].name);
        for (T g : params[i].value.grad())
            if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + params[i].name);
    }

    state.t += 1;
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
    const T lr = static_cast<T>(state.lr);
    const T eps = static_cast<T>(state.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].value.mutable_data();
        auto grad = params[i].value.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool has = !grad.empty();
        for (std::size_t k = 0; k < p.size(); ++k) {
            const T g = has ? grad[k] : T(0);
            m[k] = b1 * m[k] + (T(1) - b1) * g;
            v[k] = b2 * v[k] + (T(1) - b2) * g * g;
            const T mhat = m[k] / c1;
            const T vhat = v[k] / c2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Step decay: lr(e) = base_lr * decay_factor^floor(e / step_size).
struct LrSchedule {
    double base_lr = 1e-3;
    double decay_factor = 0.7;
    int step_size = 20;
};

inline double lr_at(const LrSchedule& s, int epoch) {
    if (epoch < 0) throw ContractError("lr_at: negative epoch");
    if (s.step_size <= 0) throw ConfigError("lr schedule step_size must be positive");
    double lr = s.base_lr;
    for (int k = 0; k < epoch / s.step_size; ++k) lr *= s.decay_factor;
    return lr;
}

template <typename T>
void zero_grad(std::span<Parameter<T>> params) {
    for (auto& p : params) p.value.zero_grad();
}

}  // namespace t3d
