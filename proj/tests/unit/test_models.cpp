#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "gradcheck.hpp"
#include "t3dnet/models/cost.hpp"
#include "t3dnet/models/geometry.hpp"
#include "t3dnet/models/supernet.hpp"
#include "toy_models.hpp"

using namespace t3d;
using namespace t3d::models;
using t3d::testing::read_mask;
using t3d::testing::random_batch;
using t3d::testing::toy_spec;

namespace {

std::vector<float> random_points(Rng& rng, std::size_t n) {
    std::vector<float> p(n * 3);
    for (auto& v : p) v = static_cast<float>(uniform(rng, -1, 1));
    return p;
}

double d2(const std::vector<float>& p, std::size_t i, const std::vector<float>& q, std::size_t j) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
        const double d = double(p[i * 3 + c]) - q[j * 3 + c];
        s += d * d;
    }
    return s;
}

std::vector<std::uint32_t> fps_oracle(const std::vector<float>& p, std::size_t m) {
    std::vector<std::uint32_t> picks{0};
    const std::size_t n = p.size() / 3;
    while (picks.size() < m) {
        std::size_t best = 0;
        double best_d = -1;
        for (std::size_t i = 0; i < n; ++i) {
            double md = std::numeric_limits<double>::infinity();
            for (auto q : picks) md = std::min(md, d2(p, i, p, q));
            if (md > best_d) {
                best_d = md;
                best = i;
            }
        }
        picks.push_back(static_cast<std::uint32_t>(best));
    }
    return picks;
}

std::vector<std::uint32_t> ball_oracle(const std::vector<float>& p, const std::vector<float>& c, double r, std::size_t k) {
    std::vector<std::uint32_t> out;
    for (std::size_t j = 0; j < c.size() / 3; ++j) {
        std::vector<std::uint32_t> hits;
        for (std::size_t i = 0; i < p.size() / 3; ++i)
            if (d2(p, i, c, j) <= r * r) hits.push_back(static_cast<std::uint32_t>(i));
        if (hits.empty()) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < p.size() / 3; ++i)
                if (d2(p, i, c, j) < d2(p, best, c, j)) best = i;
            hits.push_back(static_cast<std::uint32_t>(best));
        }
        for (std::size_t t = 0; t < k; ++t) out.push_back(t < hits.size() ? hits[t] : hits[0]);
    }
    return out;
}

std::vector<const CloudGeometry*> ptrs(const std::vector<CloudGeometry>& g) {
    std::vector<const CloudGeometry*> out;
    for (const auto& x : g) out.push_back(&x);
    return out;
}

SubnetSelection random_selection(const ExpandOptions& o, std::uint64_t seed) {
    Rng rng(seed);
    return sample_selection(o, rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Geometry

TEST(Fps, AllPointsInGreedyOrder) {
    Rng rng(1);
    auto p = random_points(rng, 10);
    auto picks = farthest_point_sampling(p, 10);
    EXPECT_EQ(picks, fps_oracle(p, 10));
    std::set<std::uint32_t> uniq(picks.begin(), picks.end());
    EXPECT_EQ(uniq.size(), 10u);
}

TEST(Fps, CollinearPicksFarEnd) {
    std::vector<float> p{0, 0, 0, 1, 0, 0, 2, 0, 0, 10, 0, 0};
    EXPECT_EQ(farthest_point_sampling(p, 2), (std::vector<std::uint32_t>{0, 3}));
}

TEST(Fps, MatchesBruteForceOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 25; ++trial) {
        auto p = random_points(rng, 32);
        auto picks = farthest_point_sampling(p, 8);
        EXPECT_EQ(picks, fps_oracle(p, 8));
        EXPECT_EQ(std::set<std::uint32_t>(picks.begin(), picks.end()).size(), 8u);
    }
}

TEST(Fps, TiesGoToLowestIndex) {
    std::vector<float> p{0, 0, 0, 1, 0, 0, -1, 0, 0};
    EXPECT_EQ(farthest_point_sampling(p, 2), (std::vector<std::uint32_t>{0, 1}));
}

TEST(Fps, TooManyPicksIsContractError) {
    std::vector<float> p(9, 0.f);
    EXPECT_THROW(farthest_point_sampling(p, 4), ContractError);
}

TEST(BallQuery, AllInsideGivesLeadingIndices) {
    Rng rng(3);
    auto p = random_points(rng, 12);
    std::vector<float> c{0, 0, 0};
    auto g = ball_query(p, c, 10.0, 12);
    std::vector<std::uint32_t> expect(12);
    std::iota(expect.begin(), expect.end(), 0u);
    EXPECT_EQ(g, expect);
    EXPECT_EQ(ball_query(p, c, 10.0, 5), (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
}

TEST(BallQuery, EmptyBallUsesNearestPoint) {
    std::vector<float> p{5, 0, 0, 3, 0, 0, 9, 9, 9};
    std::vector<float> c{0, 0, 0};
    EXPECT_EQ(ball_query(p, c, 0.5, 4), (std::vector<std::uint32_t>{1, 1, 1, 1}));
}

TEST(BallQuery, PadsWithFirstHit) {
    std::vector<float> p{5, 0, 0, 0.1f, 0, 0, 0.2f, 0, 0};
    std::vector<float> c{0, 0, 0};
    EXPECT_EQ(ball_query(p, c, 0.5, 4), (std::vector<std::uint32_t>{1, 2, 1, 1}));
}

TEST(BallQuery, MatchesDistanceScanOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 25; ++trial) {
        auto p = random_points(rng, 40);
        auto c = random_points(rng, 6);
        const double r = uniform(rng, 0.1, 1.2);
        EXPECT_EQ(ball_query(p, c, r, 7), ball_oracle(p, c, r, 7));
    }
}

TEST(BallQuery, EmptyPointSetIsContractError) {
    std::vector<float> none, c{0, 0, 0};
    EXPECT_THROW(ball_query(none, c, 1.0, 2), ContractError);
}

// ---------------------------------------------------------------------------
// Plan and options

TEST(Plan, SegmentsFollowTopology) {
    auto plan = build_plan(toy_spec());
    ASSERT_EQ(plan.layers.size(), 10u);
    EXPECT_EQ(plan.layers[0].name, "sa1.s0.l0");
    EXPECT_EQ(plan.layers[0].full_in(), 3u);
    // stage 2 first layer sees xyz + both stage-1 scale outputs
    const auto& l = plan.layers[plan.stage_layers[1][0][0]];
    ASSERT_EQ(l.in_segments.size(), 3u);
    EXPECT_EQ(l.in_segments[0].source, -1);
    EXPECT_EQ(l.full_in(), 3u + 8u + 16u);
    const auto& out = plan.layers.back();
    EXPECT_EQ(out.name, "head.out");
    EXPECT_FALSE(out.scalable_out);
    EXPECT_FALSE(out.has_norm);
}

TEST(Options, TinyFirstFullLastMidpoint) {
    auto o = build_expand_options(toy_spec(), 3);
    auto plan = build_plan(toy_spec());
    EXPECT_EQ(o.per_layer[0], (std::vector<std::uint32_t>{2, 5, 8}));
    EXPECT_EQ(o.per_layer[plan.stage_layers[2][0][1]], (std::vector<std::uint32_t>{8, 20, 32}));
    EXPECT_EQ(o.per_layer.back(), (std::vector<std::uint32_t>{3}));
}

TEST(Config, JsonRoundTripAndDigest) {
    auto s = mini_spec();
    auto back = spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    EXPECT_EQ(spec_digest(back), spec_digest(s));
    auto other = s;
    other.head[0] = 100;
    EXPECT_NE(spec_digest(other), spec_digest(s));
}

TEST(Config, RationalWidthScaleAndErrors) {
    auto j = to_json(mini_spec());
    j["width_scale_tiny"] = "1/4";
    EXPECT_DOUBLE_EQ(spec_from_json(j).width_scale_tiny, 0.25);
    j["width_scale_tiny"] = "x/4";
    EXPECT_THROW(spec_from_json(j), ConfigError);
    j = to_json(mini_spec());
    j.erase("head");
    EXPECT_THROW(spec_from_json(j), ConfigError);
    j = to_json(mini_spec());
    j["stages"][0]["npoint"] = 0;
    EXPECT_THROW(spec_from_json(j), ConfigError);
}

// ---------------------------------------------------------------------------
// Forward

TEST(Forward, LogitShapeForAnySelection) {
    Rng rng(5);
    auto net = Supernet<float>::with_default_options(toy_spec(), 1);
    auto batch = random_batch(rng, 3, 16, 3);
    for (auto sel : {net.tiny(), net.full(), random_selection(net.options(), 9)}) {
        auto out = net.forward(batch, sel, {});
        EXPECT_EQ(out.logits.shape(), (Shape{3, 3}));
        EXPECT_EQ(out.global_feature.dim(0), 3u);
        EXPECT_EQ(out.global_feature.dim(1), sel.widths[net.plan().global_feature_layer()]);
    }
}

TEST(Forward, TooFewPointsNamesTheStage) {
    Rng rng(5);
    auto net = Supernet<float>::with_default_options(toy_spec(), 1);
    auto batch = random_batch(rng, 2, 6, 3);
    try {
        net.forward(batch, net.full(), {});
        FAIL();
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos) << e.what();
    }
}

TEST(Forward, WidthBeyondFullIsContractError) {
    Rng rng(5);
    auto net = Supernet<float>::with_default_options(toy_spec(), 1);
    auto batch = random_batch(rng, 2, 16, 3);
    auto sel = net.full();
    sel.widths[0] = 9;
    EXPECT_THROW(net.forward(batch, sel, {}), ContractError);
}

TEST(Forward, DeterministicInEvalMode) {
    Rng rng(6);
    auto net = Supernet<float>::with_default_options(toy_spec(), 2);
    auto batch = random_batch(rng, 4, 16, 3);
    auto a = net.forward(batch, net.full(), {});
    auto b = net.forward(batch, net.full(), {});
    EXPECT_EQ(a.logits.values(), b.logits.values());
}

TEST(Forward, TinySelectionEqualsStandaloneCopy) {
    Rng rng(7);
    auto net = Supernet<float>::with_default_options(toy_spec(), 3);
    // give the norm sets non-trivial statistics first
    {
        NoGradGuard ng;
        for (int i = 0; i < 3; ++i) {
            auto warm = random_batch(rng, 4, 16, 3);
            Rng drop(i);
            net.forward(warm, net.tiny(), {true, StatsPolicy::all, &drop});
        }
    }
    for (auto& l : net.layers())
        for (auto& n : l.norms)
            for (auto& g : n.gamma.value.mutable_data()) g = static_cast<float>(uniform(rng, 0.5, 1.5));
    auto tiny_net = extract_subnet(net, net.tiny());
    EXPECT_EQ(tiny_net.plan().layers[0].full_out, 2u);
    auto batch = random_batch(rng, 4, 16, 3);
    for (bool training : {false, true}) {
        Rng da(77), db(77);
        auto a = net.forward(batch, net.tiny(), {training, StatsPolicy::none, &da});
        auto b = tiny_net.forward(batch, tiny_net.full(), {training, StatsPolicy::none, &db});
        ASSERT_EQ(a.logits.shape(), b.logits.shape());
        for (std::size_t i = 0; i < a.logits.numel(); ++i) EXPECT_NEAR(a.logits[i], b.logits[i], 1e-5);
    }
}

TEST(Forward, PermutationInvariantWithFixedStart) {
    auto spec = toy_spec();
    for (auto& st : spec.stages)
        for (auto& sc : st.scales) {
            sc.radius = 10.0;
            sc.nsample = 16;
        }
    Rng rng(8);
    auto net = Supernet<float>::with_default_options(spec, 4);
    auto batch = random_batch(rng, 1, 16, 3);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    auto permuted = batch;
    for (std::size_t i = 0; i < 16; ++i)
        for (int c = 0; c < 3; ++c) permuted.points[i * 3 + c] = batch.points[perm[i] * 3 + c];
    auto a = net.forward(batch, net.full(), {});
    auto b = net.forward(permuted, net.full(), {});
    for (std::size_t i = 0; i < a.logits.numel(); ++i) EXPECT_NEAR(a.logits[i], b.logits[i], 1e-4);
}

TEST(SetAbstraction, PermutingGroupMembersLeavesPoolUnchanged) {
    Rng rng(9);
    auto net = Supernet<float>::with_default_options(toy_spec(), 5);
    auto batch = random_batch(rng, 2, 16, 3);
    std::vector<CloudGeometry> geo;
    for (int b = 0; b < 2; ++b)
        geo.push_back(compute_geometry(net.spec(), std::span(batch.points).subspan(b * 48, 48)));
    auto shuffled = geo;
    for (auto& g : shuffled)
        for (auto& grp : g.stages[0].groups) {
            const std::size_t k = grp.size() / 8;
            for (std::size_t m = 0; m < 8; ++m) std::reverse(grp.begin() + m * k, grp.begin() + (m + 1) * k);
        }
    auto a = net.set_abstraction(0, batch.points, 2, {}, ptrs(geo), net.full(), {});
    auto b = net.set_abstraction(0, batch.points, 2, {}, ptrs(shuffled), net.full(), {});
    EXPECT_EQ(a.values(), b.values());
}

TEST(SetAbstraction, SingleMemberGroupsPoolIsIdentity) {
    SupernetSpec s;
    s.num_classes = 2;
    s.width_scale_tiny = 0.5;
    s.stages = {{false, 4, {{0.3, 1, {4}}}}, {true, 0, {{0.0, 0, {4}}}}};
    s.head = {};
    Rng rng(10);
    auto net = Supernet<double>::with_default_options(s, 6);
    auto pts = random_points(rng, 6);
    std::vector<CloudGeometry> geo{compute_geometry(s, pts)};
    auto pooled = net.set_abstraction(0, pts, 1, {}, ptrs(geo), net.full(), {});
    // k = 1: pooled rows equal the MLP applied to the single member
    const auto& l = net.layers()[0];
    const auto& sg = geo[0].stages[0];
    for (std::size_t m = 0; m < 4; ++m) {
        const std::uint32_t p = sg.groups[0][m];
        for (std::size_t o = 0; o < 4; ++o) {
            double h = l.bias.value[o];
            for (int c = 0; c < 3; ++c) h += l.weight.value[o * 3 + c] * (double(pts[p * 3 + c]) - sg.xyz[m * 3 + c]);
            h = h / std::sqrt(1.0 + 1e-5);
            EXPECT_NEAR(pooled[m * 4 + o], std::max(0.0, h), 1e-12);
        }
    }
}

TEST(SetAbstraction, TwoScaleStageMatchesHandComputation) {
    SupernetSpec s;
    s.num_classes = 2;
    s.width_scale_tiny = 0.5;
    s.stages = {{false, 2, {{0.6, 2, {4}}, {1.5, 3, {4}}}}, {true, 0, {{0.0, 0, {4}}}}};
    s.head = {};
    auto net = Supernet<double>::with_default_options(s, 7);
    Rng rng(11);
    for (auto& l : net.layers())
        for (auto& n : l.norms) {
            for (auto& g : n.gamma.value.mutable_data()) g = uniform(rng, 0.5, 1.5);
            for (auto& b : n.beta.value.mutable_data()) b = uniform(rng, -0.2, 0.2);
            for (auto& v : n.running_mean) v = uniform(rng, -0.1, 0.1);
            for (auto& v : n.running_var) v = uniform(rng, 0.5, 2.0);
        }
    std::vector<float> pts{0, 0, 0, 1, 0, 0, 0, 0.5f, 0, 0.2f, 0.1f, 0.3f, -0.4f, 0.2f, 0};
    std::vector<CloudGeometry> geo{compute_geometry(s, pts)};
    auto sel = net.tiny();  // width 2 per scale: weight slices are 2 x 3
    auto out = net.set_abstraction(0, pts, 1, {}, ptrs(geo), sel, {});
    ASSERT_EQ(out.shape(), (Shape{2, 4}));
    const auto& sg = geo[0].stages[0];
    for (std::size_t scale = 0; scale < 2; ++scale) {
        const auto& l = net.layers()[scale];
        const auto& ns = l.norms[0];
        const std::size_t k = s.stages[0].scales[scale].nsample;
        for (std::size_t m = 0; m < 2; ++m)
            for (std::size_t o = 0; o < 2; ++o) {
                double best = -1e300;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::uint32_t p = sg.groups[scale][m * k + j];
                    double h = l.bias.value[o];
                    for (int c = 0; c < 3; ++c)
                        h += l.weight.value[o * 3 + c] * (double(pts[p * 3 + c]) - sg.xyz[m * 3 + c]);
                    h = (h - ns.running_mean[o]) / std::sqrt(ns.running_var[o] + 1e-5) * ns.gamma.value[o] +
                        ns.beta.value[o];
                    best = std::max(best, std::max(0.0, h));
                }
                EXPECT_NEAR(out[m * 4 + scale * 2 + o], best, 1e-12);
            }
    }
}

// ---------------------------------------------------------------------------
// Weight sharing

TEST(WeightSharing, MutatingOffTinyWeightsNeverChangesTinyOutput) {
    Rng rng(12);
    auto spec = toy_spec();
    spec.dropout = 0.0;
    auto net = Supernet<float>::with_default_options(spec, 8);
    auto batch = random_batch(rng, 4, 16, 3);
    const auto before = net.forward(batch, net.tiny(), {}).logits.values();
    const auto before_train = net.forward(batch, net.tiny(), {true, StatsPolicy::none, nullptr}).logits.values();
    auto mask = read_mask(net, net.tiny());
    auto params = net.parameters();
    ASSERT_EQ(mask.size(), params.size());
    std::size_t touched = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto d = params[p].value.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i)
            if (!mask[p][i]) {
                d[i] = static_cast<float>(uniform(rng, -5, 5));
                ++touched;
            }
    }
    for (std::size_t li = 0; li < net.layers().size(); ++li)
        for (std::size_t o = 1; o < net.layers()[li].norms.size(); ++o) {
            for (auto& v : net.layers()[li].norms[o].running_mean) v = 3.f;
            for (auto& v : net.layers()[li].norms[o].running_var) v = 0.1f;
        }
    EXPECT_GT(touched, 1000u);
    EXPECT_EQ(net.forward(batch, net.tiny(), {}).logits.values(), before);
    EXPECT_EQ(net.forward(batch, net.tiny(), {true, StatsPolicy::none, nullptr}).logits.values(), before_train);
}

TEST(WeightSharing, GradientsOutsideSelectionAreExactlyZero) {
    Rng rng(13);
    auto net = Supernet<float>::with_default_options(toy_spec(), 9);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        auto sel = seed == 0 ? net.tiny() : random_selection(net.options(), seed);
        auto batch = random_batch(rng, 4, 16, 3);
        net.zero_grad();
        Rng drop(seed);
        auto out = net.forward(batch, sel, {true, StatsPolicy::none, &drop});
        backward(cross_entropy(out.logits, batch.labels));
        auto mask = read_mask(net, sel);
        auto params = net.parameters();
        std::size_t inside_nonzero = 0;
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto g = params[p].value.grad();
            for (std::size_t i = 0; i < params[p].value.numel(); ++i) {
                const float gi = g.empty() ? 0.f : g[i];
                if (!mask[p][i])
                    ASSERT_EQ(gi, 0.f) << params[p].name << "[" << i << "]";
                else
                    inside_nonzero += gi != 0.f;
            }
        }
        EXPECT_GT(inside_nonzero, 0u);
    }
}

TEST(WeightSharing, NormStatsPolicies) {
    Rng rng(14);
    auto spec = toy_spec();
    spec.dropout = 0.0;
    auto net = Supernet<float>::with_default_options(spec, 10);
    auto batch = random_batch(rng, 4, 16, 3);
    NoGradGuard ng;
    auto tiny_mean = net.layers()[0].norms[0].running_mean;
    net.forward(batch, net.tiny(), {true, StatsPolicy::skip_tiny, nullptr});
    EXPECT_EQ(net.layers()[0].norms[0].running_mean, tiny_mean);
    net.forward(batch, net.tiny(), {true, StatsPolicy::tiny_only, nullptr});
    EXPECT_NE(net.layers()[0].norms[0].running_mean, tiny_mean);
    auto full_mean = net.layers()[0].norms[2].running_mean;
    net.forward(batch, net.full(), {true, StatsPolicy::tiny_only, nullptr});
    EXPECT_EQ(net.layers()[0].norms[2].running_mean, full_mean);
    net.forward(batch, net.full(), {false, StatsPolicy::all, nullptr});
    EXPECT_EQ(net.layers()[0].norms[2].running_mean, full_mean);
}

TEST(GradCheck, CompositeMlpSupernetDoublePrecision) {
    SupernetSpec s;
    s.num_classes = 3;
    s.width_scale_tiny = 0.5;
    s.stages = {{false, 4, {{0.9, 3, {4}}, {1.5, 2, {6}}}}, {true, 0, {{0.0, 0, {4}}}}};
    s.head = {4};
    s.dropout = 0.0;
    Rng rng(15);
    int passed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto net = Supernet<double>::with_default_options(s, 100 + trial);
        auto batch = random_batch(rng, 3, 8, 3);
        std::vector<CloudGeometry> geo;
        for (int b = 0; b < 3; ++b) geo.push_back(compute_geometry(s, std::span(batch.points).subspan(b * 24, 24)));
        auto sel = trial % 2 ? net.full() : random_selection(net.options(), trial);
        auto params = net.parameters();
        std::vector<Tensor<double>> inputs;
        for (auto& p : params) inputs.push_back(p.value);
        auto fn = [&](const std::vector<Tensor<double>>&) {
            auto out = net.forward(batch.points, 3, ptrs(geo), sel, {true, StatsPolicy::none, nullptr});
            return cross_entropy(out.logits, batch.labels);
        };
        const double err = t3d::testing::gradient_relative_error(fn, inputs, 1e-7);
        EXPECT_LT(err, 1e-3) << "trial " << trial;
        passed += err < 1e-3;
    }
    EXPECT_EQ(passed, 20);
}

// ---------------------------------------------------------------------------
// Cost accounting

TEST(Cost, CanonicalParameterParity) {
    const auto spec = canonical_spec();
    const double full = count_params(spec, 1.0);
    const double tiny = count_params(spec, 0.125);
    EXPECT_NEAR(full, 1.74e6, 0.05 * 1.74e6);
    EXPECT_NEAR(tiny, 0.03e6, 0.10 * 0.03e6);
    EXPECT_GE(full / tiny, 55.0);
    EXPECT_LE(full / tiny, 61.0);
}

TEST(Cost, SingleLinearFourToEight) {
    SupernetSpec s;
    s.num_classes = 8;
    s.stages = {{true, 0, {{0.0, 0, {4}}}}};
    auto t = cost_table(s, 1.0, 16);
    ASSERT_EQ(t.back().name, "head.out");
    EXPECT_EQ(t.back().params, 40u);
    EXPECT_EQ(t.back().flops, 2u * 4 * 8 + 8);
}

TEST(Cost, FlopRatioAtThousandPoints) {
    const auto spec = canonical_spec();
    const double r = double(count_flops(spec, 1.0, 1024)) / count_flops(spec, 0.125, 1024);
    EXPECT_GE(r, 40.0);
    EXPECT_LE(r, 60.0);
}

TEST(Cost, ToyStageHandTabulated) {
    // one MSG stage (npoint 4, nsample 2, mlp 4-6) then group-all 8, head 5, 3 classes
    SupernetSpec s;
    s.num_classes = 3;
    s.stages = {{false, 4, {{0.5, 2, {4, 6}}}}, {true, 0, {{0.0, 0, {8}}}}};
    s.head = {5};
    // sa1.l0: rows 8, 3->4 ; sa1.l1: rows 8, 4->6, pool 4*(2-1)*6
    // sa2.l0: rows 4, 9->8, pool 1*(4-1)*8 ; head.fc1: 8->5 ; head.out: 5->3
    const std::uint64_t flops = 8 * (2 * 3 * 4 + 4) + 8 * (2 * 4 * 6 + 6) + 4 * 6 + 4 * (2 * 9 * 8 + 8) + 3 * 8 +
                                (2 * 8 * 5 + 5) + (2 * 5 * 3 + 3);
    const std::uint64_t params = (12 + 4 + 8) + (24 + 6 + 12) + (72 + 8 + 16) + (40 + 5 + 10) + (15 + 3);
    EXPECT_EQ(count_flops(s, 1.0, 10), flops);
    EXPECT_EQ(count_params(s, 1.0), params);
}

TEST(Cost, ParamsMonotoneInScale) {
    const auto spec = canonical_spec();
    std::uint64_t prev = 0;
    for (int k = 1; k <= 64; ++k) {
        const auto p = count_params(spec, k / 64.0);
        EXPECT_GE(p, prev);
        prev = p;
    }
}

TEST(Cost, QuarterScaleRow) {
    const auto spec = canonical_spec();
    EXPECT_NEAR(double(count_params(spec, 0.25)), 0.11e6, 0.011e6);
    const double r = double(count_flops(spec, 1.0, 1024)) / count_flops(spec, 0.25, 1024);
    EXPECT_GE(r, 14.0);
    EXPECT_LE(r, 16.0);
}

TEST(Cost, MarkdownStatesConvention) {
    auto md = cost_table_markdown(canonical_spec(), 1.0, 1024);
    EXPECT_NE(md.find("1 MAC = 2 FLOPs"), std::string::npos);
    EXPECT_NE(md.find("| total |"), std::string::npos);
}
