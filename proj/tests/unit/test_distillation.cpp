#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "t3dnet/augmentation/stage1.hpp"
#include "t3dnet/distillation/losses.hpp"
#include "t3dnet/models/supernet.hpp"
#include "toy_models.hpp"

using namespace t3d;
using t3d::testing::random_tensor;
using Td = Tensor<double>;

namespace {

std::vector<double> softmax_row(const double* z, std::size_t c) {
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    std::vector<double> p(c);
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += p[j] = std::exp(z[j] - mx);
    for (auto& v : p) v /= s;
    return p;
}

/// Direct batch-mean KL oracle.
double kl_oracle(const Td& t, const Td& s) {
    const std::size_t b = t.dim(0), c = t.dim(1);
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        auto p = softmax_row(t.values().data() + i * c, c);
        auto q = softmax_row(s.values().data() + i * c, c);
        for (std::size_t j = 0; j < c; ++j) total += p[j] * std::log(p[j] / q[j]);
    }
    return total / b;
}

Td scaled(const Td& x, double k) {
    std::vector<double> v = x.values();
    for (auto& e : v) e *= k;
    return Td(x.shape(), std::move(v));
}

Td sc(double v) { return Td::scalar(v); }

}  // namespace

TEST(KlDivergence, IdenticalLogitsGiveZero) {
    Rng rng(1);
    auto z = random_tensor(rng, {4, 5}, -3, 3);
    EXPECT_EQ(kl_divergence(z, z).item(), 0.0);
}

TEST(KlDivergence, TwoClassClosedForm) {
    Td t({1, 2}, {std::log(2.0), 0.0});  // p = (2/3, 1/3)
    Td s({1, 2}, {0.0, 0.0});            // q = (1/2, 1/2)
    const double expect = 2.0 / 3 * std::log((2.0 / 3) / 0.5) + 1.0 / 3 * std::log((1.0 / 3) / 0.5);
    EXPECT_NEAR(kl_divergence(t, s).item(), expect, 1e-10);
}

TEST(KlDivergence, MatchesOracleAndIsNonNegative) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto t = random_tensor(rng, {3, 6}, -4, 4), s = random_tensor(rng, {3, 6}, -4, 4);
        const double kl = kl_divergence(t, s).item();
        EXPECT_NEAR(kl, kl_oracle(t, s), 1e-10);
        EXPECT_GE(kl, -1e-9);
    }
}

TEST(KlDivergence, ShapeMismatch) {
    EXPECT_THROW(kl_divergence(Td::zeros({2, 3}), Td::zeros({2, 4})), DimensionError);
}

TEST(KlDivergence, NoGradientReachesTeacher) {
    Rng rng(3);
    auto t = random_tensor(rng, {3, 4});
    auto s = random_tensor(rng, {3, 4});
    t.set_requires_grad(true);
    s.set_requires_grad(true);
    backward(kd_loss(t, s, 2.0));
    EXPECT_FALSE(t.has_grad() && std::any_of(t.grad().begin(), t.grad().end(), [](double g) { return g != 0.0; }));
    EXPECT_TRUE(s.has_grad());
}

TEST(KdLoss, TemperatureOneIsKl) {
    Rng rng(4);
    auto t = random_tensor(rng, {5, 3}, -2, 2), s = random_tensor(rng, {5, 3}, -2, 2);
    EXPECT_EQ(kd_loss(t, s, 1.0).item(), kl_divergence(t, s).item());
}

TEST(KdLoss, IdenticalLogitsZeroAtEveryTemperature) {
    Rng rng(5);
    auto z = random_tensor(rng, {4, 5}, -3, 3);
    for (double T : {1.0, 2.0, 5.0, 10.0, 15.0, 20.0}) EXPECT_NEAR(kd_loss(z, z, T).item(), 0.0, 1e-12);
}

TEST(KdLoss, TemperatureTwoIsFourTimesHalfScaledKl) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto t = random_tensor(rng, {4, 5}, -3, 3), s = random_tensor(rng, {4, 5}, -3, 3);
        EXPECT_NEAR(kd_loss(t, s, 2.0).item(), 4.0 * kl_oracle(scaled(t, 0.5), scaled(s, 0.5)), 1e-10);
        EXPECT_GE(kd_loss(t, s, 2.0).item(), -1e-9);
    }
}

TEST(KdLoss, NonPositiveTemperatureIsConfigError) {
    Td z({1, 2}, {0.0, 1.0});
    EXPECT_THROW(kd_loss(z, z, 0.0), ConfigError);
    EXPECT_THROW(kd_loss(z, z, -1.0), ConfigError);
    EXPECT_THROW(validate(KDConfig{0.0, 0.5}), ConfigError);
    EXPECT_THROW(validate(KDConfig{1.0, 1.5}), ConfigError);
}

TEST(KdLoss, GradientCheck) {
    Rng rng(7);
    auto t = random_tensor(rng, {3, 4});
    for (double T : {1.0, 2.0, 5.0}) {
        auto fn = [&](const std::vector<Td>& in) { return kd_loss(t, in[0], T); };
        EXPECT_LT(t3d::testing::gradient_relative_error(fn, {random_tensor(rng, {3, 4})}), 1e-6) << "T=" << T;
    }
}

TEST(Stage2Loss, Arithmetic) {
    EXPECT_DOUBLE_EQ(stage2_loss(sc(0.2), sc(0.8), 0.0).item(), 0.8);
    EXPECT_DOUBLE_EQ(stage2_loss(sc(0.2), sc(0.8), 0.5).item(), 0.5);
    EXPECT_THROW(stage2_loss(sc(0.2), sc(0.8), -0.1), ConfigError);
    EXPECT_EQ(KDConfig{}.alpha, 0.5);
    EXPECT_EQ(KDConfig{}.T, 1.0);
}

TEST(Stage2Loss, AffineInEachArgument) {
    for (double a : {0.0, 0.3, 0.5, 1.0}) {
        const double base = stage2_loss(sc(0.0), sc(0.0), a).item();
        const double dk = stage2_loss(sc(1.0), sc(0.0), a).item() - base;
        const double dc = stage2_loss(sc(0.0), sc(1.0), a).item() - base;
        EXPECT_NEAR(base, 0.0, 1e-15);
        EXPECT_NEAR(dk, a, 1e-15);
        EXPECT_NEAR(dc, 1 - a, 1e-15);
        EXPECT_NEAR(stage2_loss(sc(0.7), sc(0.3), a).item(), 0.7 * dk + 0.3 * dc, 1e-15);
    }
}

TEST(HintLoss, ZeroWhenMappedFeaturesMatch) {
    Rng rng(8);
    HintMap<double> map(3, 4, 1);
    auto us = random_tensor(rng, {2, 3});
    auto ut = map(us).detach();
    EXPECT_NEAR(hint_loss(ut, us, map).item(), 0.0, 1e-15);
}

TEST(HintLoss, ScalarCase) {
    HintMap<double> map(1, 1, 1);
    map.weight.value.mutable_data()[0] = 1.0;
    EXPECT_DOUBLE_EQ(hint_loss(Td({1, 1}, {3.0}), Td({1, 1}, {1.0}), map).item(), 2.0);
}

TEST(HintLoss, MatchesElementwiseOracle) {
    Rng rng(9);
    HintMap<double> map(4, 4, 2);
    auto ut = random_tensor(rng, {3, 4}), us = random_tensor(rng, {3, 4});
    const auto& w = map.weight.value.values();
    double total = 0;
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < 4; ++i) {
            double m = 0;
            for (std::size_t j = 0; j < 4; ++j) m += w[i * 4 + j] * us[b * 4 + j];
            total += 0.5 * (ut[b * 4 + i] - m) * (ut[b * 4 + i] - m);
        }
    EXPECT_NEAR(hint_loss(ut, us, map).item(), total / 3, 1e-10);
}

TEST(HintLoss, GradientsReachStudentAndMapButNotTeacher) {
    Rng rng(10);
    HintMap<double> map(3, 5, 3);
    auto ut = random_tensor(rng, {2, 5});
    ut.set_requires_grad(true);
    auto fn = [&](const std::vector<Td>& in) {
        HintMap<double> m = map;
        m.weight.value = in[1];
        return hint_loss(ut, in[0], m);
    };
    EXPECT_LT(t3d::testing::gradient_relative_error(fn, {random_tensor(rng, {2, 3}), map.weight.value}), 1e-7);
    EXPECT_FALSE(ut.has_grad() && std::any_of(ut.grad().begin(), ut.grad().end(), [](double g) { return g != 0.0; }));
}

TEST(HintLoss, WidthMismatch) {
    HintMap<double> map(3, 5, 3);
    EXPECT_THROW(hint_loss(Td::zeros({2, 4}), Td::zeros({2, 3}), map), DimensionError);
    EXPECT_THROW(hint_loss(Td::zeros({2, 5}), Td::zeros({2, 4}), map), DimensionError);
}

TEST(MutualLosses, IdenticalGiveZeroPair) {
    Rng rng(11);
    auto z = random_tensor(rng, {3, 4});
    auto [a, b] = mutual_losses(z, z, 2.0);
    EXPECT_NEAR(a.item(), 0.0, 1e-12);
    EXPECT_NEAR(b.item(), 0.0, 1e-12);
}

TEST(MutualLosses, DirectionsAndAsymmetry) {
    Rng rng(12);
    auto tiny = random_tensor(rng, {3, 4}, -3, 3), aug = random_tensor(rng, {3, 4}, -3, 3);
    auto [for_tiny, for_aug] = mutual_losses(tiny, aug, 1.0);
    EXPECT_EQ(for_tiny.item(), kd_loss(aug, tiny, 1.0).item());
    EXPECT_NEAR(for_aug.item(), kl_oracle(tiny, aug), 1e-10);
    EXPECT_NE(for_tiny.item(), for_aug.item());
    auto [s1, s2] = mutual_losses(aug, tiny, 1.0);
    EXPECT_EQ(s1.item(), for_aug.item());
    EXPECT_EQ(s2.item(), for_tiny.item());
}

TEST(MutualLosses, EachDirectionOnlyMovesItsStudent) {
    Rng rng(13);
    auto tiny = random_tensor(rng, {2, 3}), aug = random_tensor(rng, {2, 3});
    tiny.set_requires_grad(true);
    aug.set_requires_grad(true);
    auto [for_tiny, for_aug] = mutual_losses(tiny, aug, 2.0);
    backward(for_tiny);
    EXPECT_TRUE(tiny.has_grad());
    EXPECT_FALSE(aug.has_grad() && std::any_of(aug.grad().begin(), aug.grad().end(), [](double g) { return g != 0.0; }));
}

TEST(EndToEndLoss, WarmupIgnoresKd) {
    for (std::uint32_t e = 0; e < 5; ++e) {
        const double l = end_to_end_loss(sc(123.0), sc(1.0), sc(0.6), 0.5, 0.5, e, 5).item();
        EXPECT_DOUBLE_EQ(l, 0.8);
    }
    EXPECT_DOUBLE_EQ(end_to_end_alpha(0.5, 4, 5), 0.0);
    EXPECT_DOUBLE_EQ(end_to_end_alpha(0.5, 5, 5), 0.5);
}

TEST(EndToEndLoss, EquationAfterWarmup) {
    EXPECT_DOUBLE_EQ(end_to_end_loss(sc(0.4), sc(1.0), sc(0.6), 0.5, 0.5, 10, 5).item(), 0.6);
    EXPECT_DOUBLE_EQ(end_to_end_loss(sc(0.4), sc(1.0), sc(0.6), 1.0, 0.5, 10, 5).item(), 0.4);
}

TEST(EndToEndLoss, AffineInEachArgument) {
    const double a = 0.3, b = 0.8;
    auto f = [&](double kd, double ct, double ca) { return end_to_end_loss(sc(kd), sc(ct), sc(ca), a, b, 9, 2).item(); };
    EXPECT_NEAR(f(1, 0, 0), a, 1e-15);
    EXPECT_NEAR(f(0, 1, 0), (1 - a) * b, 1e-15);
    EXPECT_NEAR(f(0, 0, 1), (1 - a) * (1 - b), 1e-15);
    EXPECT_NEAR(f(0.2, 0.5, 0.9), 0.2 * a + 0.5 * (1 - a) * b + 0.9 * (1 - a) * (1 - b), 1e-15);
}

TEST(Teacher, ParametersStayGradientFreeUnderDistillation) {
    auto spec = t3d::testing::toy_spec();
    spec.dropout = 0.0;
    auto teacher = models::Supernet<double>::with_default_options(spec, 1);
    auto student = models::Supernet<double>::with_default_options(spec, 2);
    Rng rng(14);
    auto batch = t3d::testing::random_batch(rng, 4, 16, 3);
    auto t = teacher.forward(batch, teacher.full(), {});  // recorded: the losses must cut it
    auto s = student.forward(batch, student.tiny(), {true, models::StatsPolicy::none, nullptr});
    HintMap<double> map(s.global_feature.dim(1), t.global_feature.dim(1), 5);
    backward(kd_loss(t.logits, s.logits, 4.0) + hint_loss(t.global_feature, s.global_feature, map));
    for (auto& p : teacher.parameters()) EXPECT_FALSE(p.value.has_grad()) << p.name;
    EXPECT_TRUE(map.weight.value.has_grad());
    EXPECT_TRUE(student.layers()[0].weight.value.has_grad());
}
