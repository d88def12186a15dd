#pragma once

// The beta schedule and the combined tiny + augmented objective of stage 1.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/ops.hpp"
#include "t3dnet/core/tensor.hpp"

namespace t3d {

enum class BetaMode { constant, linear_decay };

struct BetaSchedule {
    BetaMode mode = BetaMode::linear_decay;
    double beta_start = 0.9;
    double beta_end = 0.5;
    std::uint32_t total_epochs = 30;

    static BetaSchedule fixed(double beta) { return {BetaMode::constant, beta, beta, 1}; }
};

inline std::string to_string(BetaMode m) { return m == BetaMode::constant ? "static" : "linear"; }

inline BetaMode parse_beta_mode(const std::string& s) {
    if (s == "static" || s == "constant") return BetaMode::constant;
    if (s == "linear" || s == "linear-decay" || s == "linear_decay") return BetaMode::linear_decay;
    throw ConfigError("unknown beta mode '" + s + "' (expected static or linear)");
}

inline void validate(const BetaSchedule& s) {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(s.beta_start) || !unit(s.beta_end)) throw ConfigError("beta endpoints must lie in [0, 1]");
    if (s.total_epochs == 0) throw ConfigError("beta schedule needs at least one epoch");
}

/// Linear mode runs from beta_start at epoch 0 to beta_end at epoch
/// total_epochs - 1, clamped outside that range.
inline double beta_at(const BetaSchedule& s, std::uint32_t epoch) {
    if (s.mode == BetaMode::constant || s.total_epochs <= 1) return s.beta_start;
    const std::uint32_t last = s.total_epochs - 1;
    if (epoch >= last) return s.beta_end;
    const double t = static_cast<double>(epoch) / last;
    const double b = s.beta_start + (s.beta_end - s.beta_start) * t;
    return std::clamp(b, std::min(s.beta_start, s.beta_end), std::max(s.beta_start, s.beta_end));
}

template <typename T>
struct Stage1Terms {
    Tensor<T> ce_tiny;
    Tensor<T> ce_aug;
    Tensor<T> total;
};

/// beta * CE(tiny) + (1 - beta) * CE(aug).
template <typename T>
Stage1Terms<T> stage1_terms(const Tensor<T>& logits_tiny, const Tensor<T>& logits_aug,
                            std::span<const std::uint32_t> labels, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
    if (logits_tiny.shape() != logits_aug.shape())
        throw DimensionError("stage1_loss: tiny logits " + detail::shape_str(logits_tiny.shape()) +
                             " vs augmented logits " + detail::shape_str(logits_aug.shape()));
    Stage1Terms<T> t{cross_entropy(logits_tiny, labels), cross_entropy(logits_aug, labels), {}};
    t.total = scale(t.ce_tiny, static_cast<T>(beta)) + scale(t.ce_aug, static_cast<T>(1.0 - beta));
    return t;
}

template <typename T>
Tensor<T> stage1_loss(const Tensor<T>& logits_tiny, const Tensor<T>& logits_aug, std::span<const std::uint32_t> labels,
                      double beta) {
    return stage1_terms(logits_tiny, logits_aug, labels, beta).total;
}

}  // namespace t3d
