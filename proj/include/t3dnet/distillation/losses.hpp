#pragma once

// Logit distillation, feature hints, mutual learning and the end-to-end
// objective. Every loss is a batch mean.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/ops.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/core/tensor.hpp"

namespace t3d {

struct KDConfig {
    double T = 1.0;
    double alpha = 0.5;
};

inline void validate(const KDConfig& c) {
    if (!(c.T > 0.0) || !std::isfinite(c.T)) throw ConfigError("temperature T must be > 0, got " + std::to_string(c.T));
    if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(c.alpha));
}

/// Batch mean of sum_c p_t(c) log(p_t(c) / p_s(c)). The teacher side is
/// detached.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits) {
    if (teacher_logits.shape() != student_logits.shape() || teacher_logits.rank() != 2)
        throw DimensionError("kl_divergence: teacher " + detail::shape_str(teacher_logits.shape()) + " vs student " +
                             detail::shape_str(student_logits.shape()));
    const Tensor<T> t = teacher_logits.detach();
    const Tensor<T> log_pt = log_softmax(t);
    const Tensor<T> pt = softmax(t);
    const Tensor<T> per = sum_axis(pt * (log_pt - log_softmax(student_logits)), 1);
    return mean(per);
}

/// T^2 * KL(softmax(z_t / T) || softmax(z_s / T)).
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ConfigError("temperature T must be > 0, got " + std::to_string(temperature));
    if (temperature == 1.0) return kl_divergence(teacher_logits, student_logits);
    const T inv = static_cast<T>(1.0 / temperature);
    return scale(kl_divergence(scale(teacher_logits.detach(), inv), scale(student_logits, inv)),
                 static_cast<T>(temperature * temperature));
}

/// alpha * kd + (1 - alpha) * ce_tiny.
template <typename T>
Tensor<T> stage2_loss(const Tensor<T>& kd, const Tensor<T>& ce_tiny, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    return scale(kd, static_cast<T>(alpha)) + scale(ce_tiny, static_cast<T>(1.0 - alpha));
}

/// Trainable linear map from the student feature width to the teacher's.
template <typename T>
struct HintMap {
    Parameter<T> weight;  // teacher_width x student_width

    HintMap(std::size_t student_width, std::size_t teacher_width, std::uint64_t seed)
        : weight{"hint.weight", Tensor<T>::zeros({teacher_width, student_width}, true)} {
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(student_width));
        for (auto& v : weight.value.mutable_data()) v = static_cast<T>(uniform(rng, -bound, bound));
    }

    std::size_t student_width() const { return weight.value.dim(1); }
    std::size_t teacher_width() const { return weight.value.dim(0); }

    Tensor<T> operator()(const Tensor<T>& student_feat) const {
        if (student_feat.rank() != 2 || student_feat.dim(1) != student_width())
            throw DimensionError("hint map expects student features of width " + std::to_string(student_width()) +
                                 ", got " + detail::shape_str(student_feat.shape()));
        return matmul(student_feat, transpose(weight.value));
    }
};

/// Batch mean of 0.5 * ||u_t - W u_s||^2.
template <typename T>
Tensor<T> hint_loss(const Tensor<T>& teacher_feat, const Tensor<T>& student_feat, const HintMap<T>& map) {
    if (teacher_feat.rank() != 2 || teacher_feat.dim(1) != map.teacher_width())
        throw DimensionError("hint_loss: teacher features " + detail::shape_str(teacher_feat.shape()) +
                             " do not match map output width " + std::to_string(map.teacher_width()));
    const Tensor<T> mapped = map(student_feat);
    if (mapped.dim(0) != teacher_feat.dim(0)) throw DimensionError("hint_loss: batch sizes differ");
    const Tensor<T> d = teacher_feat.detach() - mapped;
    const T coef = static_cast<T>(0.5 / static_cast<double>(teacher_feat.dim(0)));
    return scale(sum(d * d), coef);
}

/// (aug -> tiny, tiny -> aug); each direction treats its teacher as constant.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mutual_losses(const Tensor<T>& tiny_logits, const Tensor<T>& aug_logits,
                                              double temperature) {
    if (tiny_logits.shape() != aug_logits.shape())
        throw DimensionError("mutual_losses: tiny " + detail::shape_str(tiny_logits.shape()) + " vs augmented " +
                             detail::shape_str(aug_logits.shape()));
    return {kd_loss(aug_logits, tiny_logits, temperature), kd_loss(tiny_logits, aug_logits, temperature)};
}

/// Distillation weight in effect: zero during warm-up.
inline double end_to_end_alpha(double alpha, std::uint32_t epoch, std::uint32_t warmup) {
    return epoch < warmup ? 0.0 : alpha;
}

/// alpha * kd + (1 - alpha) * (beta * ce_tiny + (1 - beta) * ce_aug), with
/// alpha forced to 0 while epoch < warmup.
template <typename T>
Tensor<T> end_to_end_loss(const Tensor<T>& kd, const Tensor<T>& ce_tiny, const Tensor<T>& ce_aug, double alpha,
                          double beta, std::uint32_t epoch, std::uint32_t warmup) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
    const double a = end_to_end_alpha(alpha, epoch, warmup);
    const Tensor<T> s1 = scale(ce_tiny, static_cast<T>(beta)) + scale(ce_aug, static_cast<T>(1.0 - beta));
    if (a == 0.0) return s1;
    return scale(kd, static_cast<T>(a)) + scale(s1, static_cast<T>(1.0 - a));
}

}  // namespace t3d
