#pragma once

// Width options per layer and subnet selections drawn from them.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/models/spec.hpp"

namespace t3d {

/// Ordered width options per layer, tiny first and full last. Layers with a
/// pinned output carry a single option.
struct ExpandOptions {
    std::vector<std::vector<std::uint32_t>> per_layer;
};

/// Chosen output width of every layer. A layer's input width follows from the
/// widths of the layers feeding it (see models::input_width).
struct SubnetSelection {
    std::vector<std::uint32_t> widths;
    bool operator==(const SubnetSelection&) const = default;
};

/// r options per scalable layer, evenly spaced from tiny to full width:
/// option j = w_tiny + floor(j * (w_full - w_tiny) / (r - 1)). For r = 3 the
/// middle option is floor((w_tiny + w_full) / 2).
inline ExpandOptions build_expand_options(const models::SupernetSpec& spec, std::uint32_t r) {
    if (r < 2) throw ConfigError("expand ratio r must be >= 2, got " + std::to_string(r));
    const auto plan = models::build_plan(spec);
    ExpandOptions o;
    for (const auto& l : plan.layers) {
        if (!l.scalable_out) {
            o.per_layer.push_back({l.full_out});
            continue;
        }
        const std::uint32_t tiny = models::scaled_width(l.full_out, spec.width_scale_tiny);
        const std::uint32_t full = l.full_out;
        if (tiny >= full)
            throw ConfigError("layer " + l.name + ": tiny width " + std::to_string(tiny) + " equals full width " +
                              std::to_string(full) + "; nothing to augment");
        if (full - tiny < r - 1)
            throw ConfigError("layer " + l.name + ": " + std::to_string(r) + " distinct widths do not fit between " +
                              std::to_string(tiny) + " and " + std::to_string(full));
        std::vector<std::uint32_t> opts;
        for (std::uint32_t j = 0; j < r; ++j)
            opts.push_back(tiny + static_cast<std::uint32_t>((std::uint64_t{j} * (full - tiny)) / (r - 1)));
        o.per_layer.push_back(std::move(opts));
    }
    return o;
}

/// One option per layer: the given widths.
inline ExpandOptions single_option(const std::vector<std::uint32_t>& widths) {
    ExpandOptions o;
    for (auto w : widths) o.per_layer.push_back({w});
    return o;
}

inline void validate(const ExpandOptions& o, const models::LayerPlan& plan) {
    if (o.per_layer.size() != plan.layers.size())
        throw ConfigError("expand options cover " + std::to_string(o.per_layer.size()) + " layers, model has " +
                          std::to_string(plan.layers.size()));
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const auto& opts = o.per_layer[i];
        const auto& l = plan.layers[i];
        if (opts.empty()) throw ConfigError("layer " + l.name + ": no width options");
        for (std::size_t j = 0; j < opts.size(); ++j) {
            if (opts[j] < 1 || opts[j] > l.full_out)
                throw ConfigError("layer " + l.name + ": option " + std::to_string(opts[j]) + " outside [1, " +
                                  std::to_string(l.full_out) + "]");
            if (j > 0 && opts[j] <= opts[j - 1]) throw ConfigError("layer " + l.name + ": options must be strictly increasing");
        }
        if (!l.scalable_out && (opts.size() != 1 || opts[0] != l.full_out))
            throw ConfigError("layer " + l.name + ": pinned width cannot have options");
    }
}

inline SubnetSelection tiny_selection(const ExpandOptions& o) {
    SubnetSelection s;
    for (const auto& opts : o.per_layer) s.widths.push_back(opts.front());
    return s;
}

inline SubnetSelection full_selection(const ExpandOptions& o) {
    SubnetSelection s;
    for (const auto& opts : o.per_layer) s.widths.push_back(opts.back());
    return s;
}

/// Each layer with more than one option draws uniform_index(rng, n), in layer
/// order; single-option layers consume no randomness.
inline SubnetSelection sample_selection(const ExpandOptions& o, Rng& rng) {
    SubnetSelection s;
    for (const auto& opts : o.per_layer)
        s.widths.push_back(opts.size() == 1 ? opts[0] : opts[uniform_index(rng, opts.size())]);
    return s;
}

/// The selection of `epoch` under the subnet-sampling seed.
inline SubnetSelection epoch_selection(const ExpandOptions& o, std::uint64_t subnet_seed, std::uint64_t epoch) {
    Rng rng(derive_seed(subnet_seed, {epoch}));
    return sample_selection(o, rng);
}

/// Index of `width` among the layer's options, or -1.
inline int option_index(const ExpandOptions& o, std::size_t layer, std::uint32_t width) {
    const auto& opts = o.per_layer[layer];
    auto it = std::find(opts.begin(), opts.end(), width);
    return it == opts.end() ? -1 : static_cast<int>(it - opts.begin());
}

inline bool dominates(const SubnetSelection& a, const SubnetSelection& b) {
    if (a.widths.size() != b.widths.size()) return false;
    for (std::size_t i = 0; i < a.widths.size(); ++i)
        if (a.widths[i] < b.widths[i]) return false;
    return true;
}

/// Compact CSV-safe label: "tiny", "full", or one option digit per
/// multi-option layer (options beyond 9 print as letters).
inline std::string selection_label(const ExpandOptions& o, const SubnetSelection& s) {
    if (s == tiny_selection(o)) return "tiny";
    if (s == full_selection(o)) return "full";
    std::string out;
    for (std::size_t i = 0; i < o.per_layer.size(); ++i) {
        if (o.per_layer[i].size() == 1) continue;
        const int k = option_index(o, i, s.widths[i]);
        out += k < 0 ? '?' : (k < 10 ? static_cast<char>('0' + k) : static_cast<char>('a' + k - 10));
    }
    return out;
}

}  // namespace t3d
