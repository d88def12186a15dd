#pragma once

// Parameter and FLOP accounting at a given channel scale.
//
// Params per conv/linear layer: in*out weights + out biases, plus 2*out
// normalization affine entries where a norm follows.
// FLOPs per layer application: 2*in*out (one MAC = 2 FLOPs) + out bias adds;
// max pooling costs 1 comparison per extra group member and channel.
// Normalization, activations, dropout and geometry (FPS, ball query) are not
// counted.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/models/spec.hpp"

namespace t3d::models {

inline constexpr const char* kFlopConvention =
    "FLOPs: 1 MAC = 2 FLOPs, +1 per bias add, +1 per max-pool comparison; norm/activation/geometry not counted";

struct LayerCost {
    std::string name;
    std::uint64_t rows = 0;  // applications of the layer (points x group members, or 1 for the head)
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;       // rows * (2*in*out + out)
    std::uint64_t pool_flops = 0;  // comparisons of the max-pool that consumes this layer, if any
};

inline std::vector<LayerCost> cost_table(const SupernetSpec& spec, double width_scale, std::uint32_t n_points) {
    if (!(width_scale > 0.0 && width_scale <= 1.0)) throw ConfigError("width_scale must be in (0, 1]");
    const auto plan = build_plan(spec);
    if (n_points < max_npoint(spec))
        throw ContractError("n_points " + std::to_string(n_points) + " is below the largest npoint " +
                            std::to_string(max_npoint(spec)));
    const auto widths = widths_at_scale(plan, width_scale);
    std::vector<LayerCost> table;
    std::uint64_t n_prev = n_points;
    std::vector<std::uint64_t> stage_rows(plan.layers.size(), 1), pool_members(plan.layers.size(), 0),
        pool_groups(plan.layers.size(), 0);
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const auto& st = spec.stages[si];
        for (std::size_t ci = 0; ci < st.scales.size(); ++ci) {
            const std::uint64_t groups = st.group_all ? 1 : st.npoint;
            const std::uint64_t members = st.group_all ? n_prev : st.scales[ci].nsample;
            for (int li : plan.stage_layers[si][ci]) stage_rows[li] = groups * members;
            const int last = plan.stage_layers[si][ci].back();
            pool_members[last] = members;
            pool_groups[last] = groups;
        }
        if (!st.group_all) n_prev = st.npoint;
    }
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const auto& l = plan.layers[i];
        LayerCost c;
        c.name = l.name;
        c.rows = stage_rows[i];
        c.in = input_width(plan, i, widths);
        c.out = widths[i];
        c.params = std::uint64_t{c.in} * c.out + c.out + (l.has_norm ? 2ull * c.out : 0ull);
        c.flops = c.rows * (2ull * c.in * c.out + c.out);
        if (pool_members[i] > 0) c.pool_flops = pool_groups[i] * (pool_members[i] - 1) * c.out;
        table.push_back(c);
    }
    return table;
}

inline std::uint64_t count_params(const SupernetSpec& spec, double width_scale) {
    std::uint64_t total = 0;
    const auto n = std::max<std::uint32_t>(max_npoint(spec), 1);
    for (const auto& c : cost_table(spec, width_scale, n)) total += c.params;
    return total;
}

inline std::uint64_t count_flops(const SupernetSpec& spec, double width_scale, std::uint32_t n_points) {
    std::uint64_t total = 0;
    for (const auto& c : cost_table(spec, width_scale, n_points)) total += c.flops + c.pool_flops;
    return total;
}

/// Per-layer formula table as Markdown.
inline std::string cost_table_markdown(const SupernetSpec& spec, double width_scale, std::uint32_t n_points) {
    std::ostringstream os;
    os << "| layer | rows | in | out | params | FLOPs = rows*(2*in*out+out) | pool cmp |\n";
    os << "|---|---:|---:|---:|---:|---:|---:|\n";
    std::uint64_t p = 0, f = 0;
    for (const auto& c : cost_table(spec, width_scale, n_points)) {
        os << "| " << c.name << " | " << c.rows << " | " << c.in << " | " << c.out << " | " << c.params << " | "
           << c.flops << " | " << c.pool_flops << " |\n";
        p += c.params;
        f += c.flops + c.pool_flops;
    }
    os << "| total | | | | " << p << " | " << f << " | |\n";
    os << "\n" << kFlopConvention << "\n";
    return os.str();
}

}  // namespace t3d::models
