#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "t3dnet/augmentation/expand.hpp"
#include "t3dnet/augmentation/stage1.hpp"
#include "t3dnet/models/supernet.hpp"
#include "toy_models.hpp"

using namespace t3d;
using t3d::testing::random_batch;
using t3d::testing::toy_spec;

namespace {

/// Two-class logits [a, 0] whose cross-entropy for label 0 is `ce`.
Tensor<double> logits_with_ce(double ce) {
    const double a = -std::log(std::exp(ce) - 1.0);
    return Tensor<double>({1, 2}, {a, 0.0});
}

models::SupernetSpec one_layer_spec(std::uint32_t full) {
    models::SupernetSpec s;
    s.num_classes = 2;
    s.width_scale_tiny = 0.125;
    s.stages = {{true, 0, {{0.0, 0, {full}}}}};
    return s;
}

}  // namespace

TEST(ExpandOptions, EightToSixtyFourWithThreeOptions) {
    auto o = build_expand_options(one_layer_spec(64), 3);
    EXPECT_EQ(o.per_layer[0], (std::vector<std::uint32_t>{8, 36, 64}));
    EXPECT_EQ(o.per_layer[1], (std::vector<std::uint32_t>{2}));
}

TEST(ExpandOptions, TwoOptionsAreTheEndpoints) {
    auto o = build_expand_options(one_layer_spec(64), 2);
    EXPECT_EQ(o.per_layer[0], (std::vector<std::uint32_t>{8, 64}));
}

TEST(ExpandOptions, CanonicalEndpointsAtOneEighth) {
    const auto spec = models::canonical_spec();
    const auto plan = models::build_plan(spec);
    auto o = build_expand_options(spec, 3);
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const auto& opts = o.per_layer[i];
        if (!plan.layers[i].scalable_out) {
            EXPECT_EQ(opts.size(), 1u);
            continue;
        }
        ASSERT_EQ(opts.size(), 3u);
        EXPECT_EQ(opts.front() * 8, plan.layers[i].full_out) << plan.layers[i].name;
        EXPECT_EQ(opts.back(), plan.layers[i].full_out);
        EXPECT_LT(opts[0], opts[1]);
        EXPECT_LT(opts[1], opts[2]);
    }
    EXPECT_EQ(o.per_layer[0], (std::vector<std::uint32_t>{4, 18, 32}));
}

TEST(ExpandOptions, Errors) {
    EXPECT_THROW(build_expand_options(one_layer_spec(64), 1), ConfigError);
    EXPECT_NO_THROW(build_expand_options(one_layer_spec(4), 3));
    auto s = one_layer_spec(8);
    s.width_scale_tiny = 1.0;
    EXPECT_THROW(build_expand_options(s, 3), ConfigError);
    s = one_layer_spec(2);
    s.width_scale_tiny = 0.5;
    EXPECT_THROW(build_expand_options(s, 3), ConfigError);
}

TEST(ExpandOptions, LargerRatioIsEvenlySpaced) {
    auto o = build_expand_options(one_layer_spec(64), 5);
    EXPECT_EQ(o.per_layer[0], (std::vector<std::uint32_t>{8, 22, 36, 50, 64}));
}

TEST(Sampling, DegenerateOptionAlwaysChosen) {
    auto o = single_option({5, 7, 3});
    Rng rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_selection(o, rng).widths, (std::vector<std::uint32_t>{5, 7, 3}));
}

TEST(Sampling, UniformFrequenciesOverTenThousandDraws) {
    auto o = build_expand_options(toy_spec(), 3);
    Rng rng(2026);
    const int draws = 10000;
    std::vector<std::array<int, 3>> counts(o.per_layer.size(), {0, 0, 0});
    for (int d = 0; d < draws; ++d) {
        auto s = sample_selection(o, rng);
        for (std::size_t i = 0; i < s.widths.size(); ++i)
            if (o.per_layer[i].size() == 3) ++counts[i][option_index(o, i, s.widths[i])];
    }
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (o.per_layer[i].size() == 3)
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(counts[i][k] / double(draws), 1.0 / 3.0, 0.02) << i << "/" << k;
}

TEST(Sampling, LayersDrawIndependently) {
    auto o = build_expand_options(toy_spec(), 3);
    Rng rng(7);
    std::map<std::pair<int, int>, int> joint;
    const int draws = 9000;
    for (int d = 0; d < draws; ++d) {
        auto s = sample_selection(o, rng);
        ++joint[{option_index(o, 0, s.widths[0]), option_index(o, 1, s.widths[1])}];
    }
    ASSERT_EQ(joint.size(), 9u);
    for (const auto& [k, n] : joint) EXPECT_NEAR(n / double(draws), 1.0 / 9.0, 0.02);
}

TEST(Sampling, ContainsTinyAndStaysWithinFull) {
    auto o = build_expand_options(models::canonical_spec(), 3);
    Rng rng(3);
    const auto tiny = tiny_selection(o), full = full_selection(o);
    for (int d = 0; d < 2000; ++d) {
        auto s = sample_selection(o, rng);
        EXPECT_TRUE(dominates(s, tiny));
        EXPECT_TRUE(dominates(full, s));
    }
}

TEST(Sampling, EpochSelectionIsPureFunctionOfSeed) {
    auto o = build_expand_options(toy_spec(), 3);
    for (std::uint64_t e = 0; e < 20; ++e) {
        EXPECT_EQ(epoch_selection(o, 11, e), epoch_selection(o, 11, e));
        Rng replay(derive_seed(11, {e}));
        EXPECT_EQ(epoch_selection(o, 11, e), sample_selection(o, replay));
    }
    int differs = 0;
    for (std::uint64_t e = 0; e < 20; ++e) differs += !(epoch_selection(o, 11, e) == epoch_selection(o, 12, e));
    EXPECT_GT(differs, 15);
}

TEST(Sampling, LabelsAreCompactAndDistinct) {
    auto o = build_expand_options(toy_spec(), 3);
    EXPECT_EQ(selection_label(o, tiny_selection(o)), "tiny");
    EXPECT_EQ(selection_label(o, full_selection(o)), "full");
    auto s = tiny_selection(o);
    s.widths[0] = o.per_layer[0][1];
    EXPECT_EQ(selection_label(o, s), "100000000");
}

TEST(Beta, LinearEndpointsAndMidpoint) {
    BetaSchedule b{BetaMode::linear_decay, 0.9, 0.5, 30};
    EXPECT_DOUBLE_EQ(beta_at(b, 0), 0.9);
    EXPECT_DOUBLE_EQ(beta_at(b, 29), 0.5);
    EXPECT_DOUBLE_EQ(beta_at(b, 30), 0.5);
    BetaSchedule c{BetaMode::linear_decay, 0.9, 0.5, 5};
    EXPECT_NEAR(beta_at(c, 2), 0.7, 1e-15);
    double prev = 1.0;
    for (std::uint32_t e = 0; e < 30; ++e) {
        EXPECT_LE(beta_at(b, e), prev);
        prev = beta_at(b, e);
    }
}

TEST(Beta, StaticIsConstant) {
    auto b = BetaSchedule::fixed(0.5);
    for (std::uint32_t e : {0u, 1u, 17u, 1000u}) EXPECT_EQ(beta_at(b, e), 0.5);
    EXPECT_EQ(parse_beta_mode("static"), BetaMode::constant);
    EXPECT_EQ(parse_beta_mode("linear"), BetaMode::linear_decay);
    EXPECT_THROW(parse_beta_mode("cosine"), ConfigError);
    EXPECT_THROW(validate(BetaSchedule{BetaMode::constant, 1.5, 0.5, 3}), ConfigError);
}

TEST(Stage1Loss, BetaOneIsTinyCrossEntropy) {
    Tensor<double> lt({2, 3}, {0.1, 0.5, -0.3, 1.0, 0.0, 0.2});
    Tensor<double> la({2, 3}, {-0.4, 0.9, 0.3, 0.2, 0.2, 0.7});
    std::vector<std::uint32_t> y{1, 2};
    EXPECT_EQ(stage1_loss(lt, la, y, 1.0).item(), cross_entropy(lt, y).item());
    EXPECT_EQ(stage1_loss(lt, la, y, 0.0).item(), cross_entropy(la, y).item());
}

TEST(Stage1Loss, ArithmeticExample) {
    std::vector<std::uint32_t> y{0};
    auto lt = logits_with_ce(1.0), la = logits_with_ce(0.5);
    EXPECT_NEAR(cross_entropy(lt, y).item(), 1.0, 1e-12);
    EXPECT_NEAR(stage1_loss(lt, la, y, 0.5).item(), 0.75, 1e-12);
}

TEST(Stage1Loss, AffineInBeta) {
    Tensor<double> lt({2, 3}, {0.1, 0.5, -0.3, 1.0, 0.0, 0.2});
    Tensor<double> la({2, 3}, {-0.4, 0.9, 0.3, 0.2, 0.2, 0.7});
    std::vector<std::uint32_t> y{0, 2};
    const double l0 = stage1_loss(lt, la, y, 0.0).item(), l1 = stage1_loss(lt, la, y, 1.0).item();
    for (double b : {0.1, 0.25, 0.5, 0.9}) EXPECT_NEAR(stage1_loss(lt, la, y, b).item(), b * l1 + (1 - b) * l0, 1e-12);
}

TEST(Stage1Loss, ShapeMismatchAndBetaRange) {
    auto a = Tensor<double>::zeros({2, 3}), b = Tensor<double>::zeros({2, 4});
    std::vector<std::uint32_t> y{0, 1};
    EXPECT_THROW(stage1_loss(a, b, y, 0.5), DimensionError);
    EXPECT_THROW(stage1_loss(a, a, y, 1.5), ConfigError);
}

TEST(Stage1Loss, GradientOutsideTinySliceIsScaledAugmentedGradient) {
    auto spec = toy_spec();
    spec.dropout = 0.0;
    auto net = models::Supernet<double>::with_default_options(spec, 21);
    Rng rng(5);
    auto batch = random_batch(rng, 4, 16, 3);
    auto aug = net.full();
    const double beta = 0.7;
    const models::ForwardOptions opt{true, models::StatsPolicy::none, nullptr};

    auto grads = [&](auto loss_of) {
        net.zero_grad();
        auto t = net.forward(batch, net.tiny(), opt);
        auto a = net.forward(batch, aug, opt);
        backward(loss_of(t.logits, a.logits));
        std::vector<std::vector<double>> out;
        for (auto& p : net.parameters()) out.emplace_back(p.value.grad().begin(), p.value.grad().end());
        return out;
    };
    using Td = Tensor<double>;
    const auto combined = grads([&](const Td& t, const Td& a) { return stage1_loss(t, a, batch.labels, beta); });
    const auto aug_only = grads([&](const Td&, const Td& a) { return cross_entropy(a, batch.labels); });
    const auto tiny_only = grads([&](const Td& t, const Td&) { return cross_entropy(t, batch.labels); });
    // rows beyond the tiny width of the first layer are read only by the augmented pass
    const std::size_t tiny_rows = net.tiny().widths[0];
    const std::size_t in = net.plan().layers[0].full_in();
    std::size_t checked = 0;
    for (std::size_t i = tiny_rows * in; i < combined[0].size(); ++i) {
        EXPECT_EQ(tiny_only[0][i], 0.0);
        EXPECT_NEAR(combined[0][i], (1 - beta) * aug_only[0][i], 1e-12);
        checked += aug_only[0][i] != 0.0;
    }
    EXPECT_GT(checked, 0u);
    // inside the tiny slice both terms contribute
    for (std::size_t i = 0; i < tiny_rows * in; ++i)
        EXPECT_NEAR(combined[0][i], beta * tiny_only[0][i] + (1 - beta) * aug_only[0][i], 1e-12);
}
