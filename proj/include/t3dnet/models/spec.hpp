#pragma once

// Architecture description of the largest network and its flattened layer plan.
//
// Config schema (JSON):
//   { "name": str, "num_classes": int, "width_scale_tiny": number | "a/b",
//     "expand_ratio": int (default 3), "dropout": number (default 0.4),
//     "stages": [ { "npoint": int,
//                   "scales": [ {"radius": number, "nsample": int, "mlp": [int]} ] }
//               | { "group_all": true, "mlp": [int] } ],
//     "head": [int] }
// The last stage must be group_all; "head" lists hidden widths, the final
// linear layer to num_classes is implicit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"

namespace t3d::models {

struct ScaleSpec {
    double radius = 0.0;
    std::uint32_t nsample = 0;
    std::vector<std::uint32_t> mlp;
};

struct StageSpec {
    bool group_all = false;
    std::uint32_t npoint = 0;       // unused when group_all
    std::vector<ScaleSpec> scales;  // exactly one (radius/nsample unused) when group_all
};

struct SupernetSpec {
    std::string name = "custom";
    std::vector<StageSpec> stages;
    std::vector<std::uint32_t> head;
    std::uint32_t num_classes = 0;
    double width_scale_tiny = 0.125;
    std::uint32_t expand_ratio = 3;
    double dropout = 0.4;
};

/// Channel width after scaling: max(1, round(full * s)).
inline std::uint32_t scaled_width(std::uint32_t full, double s) {
    return static_cast<std::uint32_t>(std::max<long>(1, std::lround(static_cast<double>(full) * s)));
}

enum class LayerKind { shared_mlp, linear };

/// A contiguous block of a layer's input channels: either the 3 pinned
/// coordinate channels or the full output of an earlier layer.
struct Segment {
    int source = -1;  // producing layer index; -1 = xyz coordinates
    std::uint32_t full = 3;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::shared_mlp;
    int stage = -1;  // -1 for the classifier head
    int scale = 0;
    std::vector<Segment> in_segments;
    std::uint32_t full_out = 0;
    bool scalable_out = true;
    bool has_norm = true;  // norm + relu follow the layer
    bool dropout_after = false;

    std::uint32_t full_in() const {
        std::uint32_t s = 0;
        for (const auto& g : in_segments) s += g.full;
        return s;
    }
    bool scalable_in() const {
        return std::any_of(in_segments.begin(), in_segments.end(), [](const Segment& g) { return g.source >= 0; });
    }
};

/// Flattened conv/linear layers in forward order plus, per stage and scale,
/// the indices of its layers.
struct LayerPlan {
    std::vector<LayerSpec> layers;
    std::vector<std::vector<std::vector<int>>> stage_layers;  // [stage][scale] -> layer indices
    std::vector<int> head_layers;
    /// Last layer of the group-all stage; its pooled output is the global feature.
    int global_feature_layer() const { return stage_layers.back().front().back(); }
};

inline void validate(const SupernetSpec& s) {
    if (s.stages.empty()) throw ConfigError("model config needs at least one stage");
    if (s.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(s.width_scale_tiny > 0.0 && s.width_scale_tiny <= 1.0))
        throw ConfigError("width_scale_tiny must be in (0, 1]");
    if (s.expand_ratio < 1) throw ConfigError("expand_ratio must be >= 1");
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    for (std::size_t i = 0; i < s.stages.size(); ++i) {
        const auto& st = s.stages[i];
        const std::string where = "stage " + std::to_string(i + 1);
        if (st.group_all != (i + 1 == s.stages.size()))
            throw ConfigError(where + ": exactly the last stage must be group_all");
        if (st.scales.empty()) throw ConfigError(where + ": no scales");
        if (st.group_all && st.scales.size() != 1) throw ConfigError(where + ": group_all takes one mlp");
        if (!st.group_all && st.npoint == 0) throw ConfigError(where + ": npoint must be >= 1");
        if (i > 0 && !st.group_all && st.npoint > s.stages[i - 1].npoint)
            throw ConfigError(where + ": npoint exceeds the previous stage");
        for (const auto& sc : st.scales) {
            if (sc.mlp.empty()) throw ConfigError(where + ": empty mlp");
            for (auto w : sc.mlp)
                if (w == 0) throw ConfigError(where + ": mlp widths must be >= 1");
            if (!st.group_all && (!(sc.radius > 0.0) || sc.nsample == 0))
                throw ConfigError(where + ": radius and nsample must be positive");
        }
    }
    for (auto w : s.head)
        if (w == 0) throw ConfigError("head widths must be >= 1");
}

inline LayerPlan build_plan(const SupernetSpec& spec) {
    validate(spec);
    LayerPlan plan;
    std::vector<Segment> prev_out;  // feature segments produced by the previous stage
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const auto& st = spec.stages[si];
        std::vector<Segment> out;
        plan.stage_layers.emplace_back();
        for (std::size_t ci = 0; ci < st.scales.size(); ++ci) {
            std::vector<int> ids;
            std::vector<Segment> in{Segment{-1, 3}};
            in.insert(in.end(), prev_out.begin(), prev_out.end());
            for (std::size_t li = 0; li < st.scales[ci].mlp.size(); ++li) {
                LayerSpec l;
                l.name = "sa" + std::to_string(si + 1) + (st.group_all ? "" : ".s" + std::to_string(ci)) + ".l" +
                         std::to_string(li);
                l.kind = LayerKind::shared_mlp;
                l.stage = static_cast<int>(si);
                l.scale = static_cast<int>(ci);
                l.in_segments = in;
                l.full_out = st.scales[ci].mlp[li];
                const int id = static_cast<int>(plan.layers.size());
                plan.layers.push_back(l);
                ids.push_back(id);
                in = {Segment{id, l.full_out}};
            }
            out.push_back(in.front());
            plan.stage_layers.back().push_back(std::move(ids));
        }
        prev_out = std::move(out);
    }
    std::vector<Segment> in = prev_out;
    for (std::size_t hi = 0; hi <= spec.head.size(); ++hi) {
        LayerSpec l;
        const bool last = hi == spec.head.size();
        l.name = last ? "head.out" : "head.fc" + std::to_string(hi + 1);
        l.kind = LayerKind::linear;
        l.in_segments = in;
        l.full_out = last ? spec.num_classes : spec.head[hi];
        l.scalable_out = !last;
        l.has_norm = !last;
        l.dropout_after = !last;
        const int id = static_cast<int>(plan.layers.size());
        plan.layers.push_back(l);
        plan.head_layers.push_back(id);
        in = {Segment{id, l.full_out}};
    }
    return plan;
}

/// Output width of every layer of the network scaled by s (pinned dims kept).
inline std::vector<std::uint32_t> widths_at_scale(const LayerPlan& plan, double s) {
    std::vector<std::uint32_t> w;
    for (const auto& l : plan.layers) w.push_back(l.scalable_out ? scaled_width(l.full_out, s) : l.full_out);
    return w;
}

/// Input width of layer `i` given every layer's output width.
inline std::uint32_t input_width(const LayerPlan& plan, std::size_t i, const std::vector<std::uint32_t>& out_widths) {
    std::uint32_t s = 0;
    for (const auto& g : plan.layers[i].in_segments) s += g.source < 0 ? g.full : out_widths[g.source];
    return s;
}

/// The same topology with every scalable width multiplied by s.
inline SupernetSpec scaled_spec(const SupernetSpec& spec, double s) {
    SupernetSpec out = spec;
    for (auto& st : out.stages)
        for (auto& sc : st.scales)
            for (auto& w : sc.mlp) w = scaled_width(w, s);
    for (auto& w : out.head) w = scaled_width(w, s);
    return out;
}

inline std::uint32_t max_npoint(const SupernetSpec& spec) {
    std::uint32_t m = 0;
    for (const auto& st : spec.stages)
        if (!st.group_all) m = std::max(m, st.npoint);
    return m;
}

// ---------------------------------------------------------------------------
// Config I/O

inline double parse_ratio(const nlohmann::json& j, const char* key) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        const auto slash = s.find('/');
        try {
            if (slash == std::string::npos) return std::stod(s);
            const double den = std::stod(s.substr(slash + 1));
            if (den == 0.0) throw ConfigError(std::string(key) + ": zero denominator");
            return std::stod(s.substr(0, slash)) / den;
        } catch (const std::logic_error&) {
            throw ConfigError(std::string(key) + ": cannot parse '" + s + "'");
        }
    }
    throw ConfigError(std::string(key) + " must be a number or an 'a/b' string");
}

inline nlohmann::json to_json(const SupernetSpec& s) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& st : s.stages) {
        if (st.group_all) {
            stages.push_back({{"group_all", true}, {"mlp", st.scales.front().mlp}});
            continue;
        }
        nlohmann::json scales = nlohmann::json::array();
        for (const auto& sc : st.scales) scales.push_back({{"radius", sc.radius}, {"nsample", sc.nsample}, {"mlp", sc.mlp}});
        stages.push_back({{"npoint", st.npoint}, {"scales", scales}});
    }
    return {{"name", s.name},
            {"num_classes", s.num_classes},
            {"width_scale_tiny", s.width_scale_tiny},
            {"expand_ratio", s.expand_ratio},
            {"dropout", s.dropout},
            {"stages", stages},
            {"head", s.head}};
}

inline SupernetSpec spec_from_json(const nlohmann::json& j) {
    SupernetSpec s;
    try {
        s.name = j.value("name", std::string("custom"));
        s.num_classes = j.at("num_classes").get<std::uint32_t>();
        if (j.contains("width_scale_tiny")) s.width_scale_tiny = parse_ratio(j.at("width_scale_tiny"), "width_scale_tiny");
        s.expand_ratio = j.value("expand_ratio", 3u);
        s.dropout = j.value("dropout", 0.4);
        for (const auto& js : j.at("stages")) {
            StageSpec st;
            if (js.value("group_all", false)) {
                st.group_all = true;
                st.scales.push_back(ScaleSpec{0.0, 0, js.at("mlp").get<std::vector<std::uint32_t>>()});
            } else {
                st.npoint = js.at("npoint").get<std::uint32_t>();
                for (const auto& sc : js.at("scales"))
                    st.scales.push_back(ScaleSpec{sc.at("radius").get<double>(), sc.at("nsample").get<std::uint32_t>(),
                                                  sc.at("mlp").get<std::vector<std::uint32_t>>()});
            }
            s.stages.push_back(std::move(st));
        }
        s.head = j.at("head").get<std::vector<std::uint32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    validate(s);
    return s;
}

inline SupernetSpec load_spec(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return spec_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::string_view text) {
    Digest d{};
    SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), d.data());
    return d;
}

inline std::string hex(const Digest& d) {
    static constexpr char k[] = "0123456789abcdef";
    std::string s;
    for (auto b : d) {
        s += k[b >> 4];
        s += k[b & 15];
    }
    return s;
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form.
inline Digest spec_digest(const SupernetSpec& s) { return sha256(to_json(s).dump()); }

// ---------------------------------------------------------------------------
// Built-in configurations

/// Reference PointNet++ MSG classifier used for cost parity.
inline SupernetSpec canonical_spec(std::uint32_t num_classes = 40) {
    SupernetSpec s;
    s.name = "canonical-msg";
    s.num_classes = num_classes;
    s.stages = {
        StageSpec{false, 512, {{0.1, 16, {32, 32, 64}}, {0.2, 32, {64, 64, 128}}, {0.4, 128, {64, 96, 128}}}},
        StageSpec{false, 128, {{0.2, 32, {64, 64, 128}}, {0.4, 64, {128, 128, 256}}, {0.8, 128, {128, 128, 256}}}},
        StageSpec{true, 0, {{0.0, 0, {256, 512, 1024}}}},
    };
    s.head = {512, 256};
    return s;
}

/// Desk-scale configuration: same topology, CPU-sized.
inline SupernetSpec mini_spec(std::uint32_t num_classes = 8) {
    SupernetSpec s;
    s.name = "mini-msg";
    s.num_classes = num_classes;
    s.stages = {
        StageSpec{false, 32, {{0.2, 8, {16, 16, 32}}, {0.4, 16, {16, 32, 64}}, {0.8, 16, {32, 32, 64}}}},
        StageSpec{false, 8, {{0.4, 8, {32, 32, 64}}, {0.8, 8, {32, 64, 128}}, {1.2, 8, {32, 64, 128}}}},
        StageSpec{true, 0, {{0.0, 0, {64, 128, 128}}}},
    };
    s.head = {128, 64};
    return s;
}

}  // namespace t3d::models
