#pragma once

// Width-sliceable PointNet++ MSG classifier.
//
// Every conv/linear layer stores its full-width weight [full_out x full_in] and
// bias. A forward pass under a SubnetSelection reads the leading out rows and,
// for each input segment, the leading columns of that segment. Normalization
// keeps one independent set (affine + running statistics) per width option.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "t3dnet/augmentation/expand.hpp"
#include "t3dnet/core/ops.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/core/tensor.hpp"
#include "t3dnet/data/batching.hpp"
#include "t3dnet/models/geometry.hpp"
#include "t3dnet/models/spec.hpp"

namespace t3d::models {

template <typename T>
struct NormSet {
    Parameter<T> gamma;
    Parameter<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

template <typename T>
struct LayerParams {
    Parameter<T> weight;
    Parameter<T> bias;
    std::vector<NormSet<T>> norms;  // one per width option
};

/// Which normalization sets fold batch statistics into their running stats
/// during a training-mode forward. "Tiny" is option 0 of each layer.
enum class StatsPolicy { all, none, skip_tiny, tiny_only };

struct ForwardOptions {
    bool training = false;
    StatsPolicy stats = StatsPolicy::all;
    Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;          // B x num_classes
    Tensor<T> global_feature;  // B x width of the group-all stage output
};

/// A named tensor view for serialization (parameters and running statistics).
template <typename T>
struct NamedBuffer {
    std::string name;
    Shape shape;
    std::span<T> data;
};

template <typename T>
class Supernet {
   public:
    Supernet(SupernetSpec spec, ExpandOptions options, std::uint64_t init_seed)
        : spec_(std::move(spec)), plan_(build_plan(spec_)), options_(std::move(options)) {
        validate(options_, plan_);
        for (std::size_t i = 0; i < plan_.layers.size(); ++i) {
            const auto& l = plan_.layers[i];
            const std::size_t out = l.full_out, in = l.full_in();
            Rng rng(derive_seed(init_seed, {i}));
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            std::vector<T> w(out * in), b(out);
            for (auto& v : w) v = static_cast<T>(uniform(rng, -bound, bound));
            for (auto& v : b) v = static_cast<T>(uniform(rng, -bound, bound));
            LayerParams<T> p{{l.name + ".weight", Tensor<T>({out, in}, std::move(w), true)},
                             {l.name + ".bias", Tensor<T>({out}, std::move(b), true)},
                             {}};
            if (l.has_norm)
                for (std::size_t o = 0; o < options_.per_layer[i].size(); ++o) {
                    const std::size_t width = options_.per_layer[i][o];
                    const std::string base = l.name + ".norm.o" + std::to_string(o);
                    p.norms.push_back(NormSet<T>{{base + ".gamma", Tensor<T>::full({width}, T(1), true)},
                                                 {base + ".beta", Tensor<T>::zeros({width}, true)},
                                                 std::vector<T>(width, T(0)),
                                                 std::vector<T>(width, T(1))});
                }
            layers_.push_back(std::move(p));
        }
    }

    /// Options from the spec's own expand ratio.
    static Supernet with_default_options(const SupernetSpec& spec, std::uint64_t init_seed) {
        return Supernet(spec, build_expand_options(spec, spec.expand_ratio), init_seed);
    }

    const SupernetSpec& spec() const { return spec_; }
    const LayerPlan& plan() const { return plan_; }
    const ExpandOptions& options() const { return options_; }
    const std::vector<LayerParams<T>>& layers() const { return layers_; }
    std::vector<LayerParams<T>>& layers() { return layers_; }

    SubnetSelection tiny() const { return tiny_selection(options_); }
    SubnetSelection full() const { return full_selection(options_); }

    /// Every trainable parameter in a fixed order (storage is shared).
    std::vector<Parameter<T>> parameters() const {
        std::vector<Parameter<T>> out;
        for (const auto& l : layers_) {
            out.push_back(l.weight);
            out.push_back(l.bias);
            for (const auto& n : l.norms) {
                out.push_back(n.gamma);
                out.push_back(n.beta);
            }
        }
        return out;
    }

    /// Parameters followed by running statistics, for checkpoints.
    std::vector<NamedBuffer<T>> buffers() {
        std::vector<NamedBuffer<T>> out;
        for (auto& l : layers_) {
            out.push_back({l.weight.name, l.weight.value.shape(), l.weight.value.mutable_data()});
            out.push_back({l.bias.name, l.bias.value.shape(), l.bias.value.mutable_data()});
            for (auto& n : l.norms) {
                const std::string base = n.gamma.name.substr(0, n.gamma.name.size() - 6);
                out.push_back({n.gamma.name, n.gamma.value.shape(), n.gamma.value.mutable_data()});
                out.push_back({n.beta.name, n.beta.value.shape(), n.beta.value.mutable_data()});
                out.push_back({base + ".running_mean", {n.running_mean.size()}, n.running_mean});
                out.push_back({base + ".running_var", {n.running_var.size()}, n.running_var});
            }
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.value.zero_grad();
    }

    /// Checks a selection against the options; returns the option index per layer.
    std::vector<int> resolve(const SubnetSelection& sel) const {
        if (sel.widths.size() != plan_.layers.size())
            throw ContractError("selection has " + std::to_string(sel.widths.size()) + " widths for " +
                                std::to_string(plan_.layers.size()) + " layers");
        std::vector<int> idx(sel.widths.size());
        for (std::size_t i = 0; i < sel.widths.size(); ++i) {
            const auto& l = plan_.layers[i];
            if (sel.widths[i] > l.full_out)
                throw ContractError("layer " + l.name + ": selected width " + std::to_string(sel.widths[i]) +
                                    " exceeds full width " + std::to_string(l.full_out));
            idx[i] = option_index(options_, i, sel.widths[i]);
            if (idx[i] < 0)
                throw ContractError("layer " + l.name + ": width " + std::to_string(sel.widths[i]) +
                                    " is not one of its options");
        }
        return idx;
    }

    /// Logits and global feature for B clouds of N points (B x N x 3), using
    /// precomputed per-cloud geometry.
    ForwardResult<T> forward(std::span<const float> points, std::size_t batch,
                             std::span<const CloudGeometry* const> geometry, const SubnetSelection& sel,
                             const ForwardOptions& opt) {
        const auto opt_idx = resolve(sel);
        if (batch == 0 || points.size() % (batch * 3) != 0)
            throw DimensionError("forward: points buffer does not hold " + std::to_string(batch) + " clouds");
        if (geometry.size() != batch) throw ContractError("forward: geometry count differs from batch size");
        const std::size_t n_points = points.size() / (batch * 3);
        const auto mnp = max_npoint(spec_);
        if (n_points < mnp)
            throw ContractError("forward: clouds have " + std::to_string(n_points) + " points, stage needs " +
                                std::to_string(mnp));

        std::vector<float> xyz(points.begin(), points.end());  // B x n_prev x 3
        Tensor<T> feats;                                        // undefined before the first stage
        for (std::size_t si = 0; si < spec_.stages.size(); ++si) {
            feats = set_abstraction(si, xyz, batch, feats, geometry, sel, opt_idx, opt);
            if (spec_.stages[si].group_all) break;
            const std::size_t m = spec_.stages[si].npoint;
            std::vector<float> next(batch * m * 3);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& sg = geometry[b]->stages[si];
                std::copy(sg.xyz.begin(), sg.xyz.end(), next.begin() + static_cast<std::ptrdiff_t>(b * m * 3));
            }
            xyz = std::move(next);
        }
        const Tensor<T> global = feats;

        Tensor<T> h = global;
        for (int li : plan_.head_layers) {
            h = apply_layer(static_cast<std::size_t>(li), h, sel, opt_idx, opt);
            if (plan_.layers[li].dropout_after && opt.training && spec_.dropout > 0.0) {
                if (!opt.dropout_rng) throw ContractError("forward: training with dropout needs a dropout RNG");
                h = dropout(h, spec_.dropout, *opt.dropout_rng, true);
            }
        }
        return {h, global};
    }

    /// One set-abstraction stage over B clouds whose previous-stage points are
    /// `xyz` (B x n x 3) with features `feats` (B*n x C, undefined for raw
    /// input). Returns B*npoint x C_out, or B x C_out for the group-all stage.
    Tensor<T> set_abstraction(std::size_t si, std::span<const float> xyz, std::size_t batch, const Tensor<T>& feats,
                              std::span<const CloudGeometry* const> geometry, const SubnetSelection& sel,
                              const ForwardOptions& opt) {
        return set_abstraction(si, xyz, batch, feats, geometry, sel, resolve(sel), opt);
    }

    /// Forward computing geometry on the fly.
    ForwardResult<T> forward(const data::PointCloudBatch& batch, const SubnetSelection& sel, const ForwardOptions& opt) {
        std::vector<CloudGeometry> geo;
        const std::size_t per = batch.points_per_cloud * 3;
        for (std::size_t b = 0; b < batch.size(); ++b)
            geo.push_back(compute_geometry(spec_, std::span(batch.points).subspan(b * per, per)));
        std::vector<const CloudGeometry*> ptrs;
        for (const auto& g : geo) ptrs.push_back(&g);
        return forward(batch.points, batch.size(), ptrs, sel, opt);
    }

   private:
    Tensor<T> set_abstraction(std::size_t si, std::span<const float> xyz, std::size_t batch, const Tensor<T>& feats,
                              std::span<const CloudGeometry* const> geometry, const SubnetSelection& sel,
                              const std::vector<int>& opt_idx, const ForwardOptions& opt) {
        const auto& st = spec_.stages.at(si);
        const std::size_t n_prev = xyz.size() / (3 * batch);
        if (feats.defined() && feats.dim(0) != batch * n_prev)
            throw DimensionError("set_abstraction: features do not match the point count");
        if (st.group_all) {
            Tensor<T> x = xyz_tensor(xyz);
            if (feats.defined()) x = concat<T>({x, feats}, 1);
            x = apply_mlp(plan_.stage_layers[si][0], x, sel, opt_idx, opt);
            return group_max(x, n_prev);
        }
        const std::size_t m = st.npoint;
        std::vector<Tensor<T>> scale_out;
        for (std::size_t ci = 0; ci < st.scales.size(); ++ci) {
            const std::size_t k = st.scales[ci].nsample;
            std::vector<std::uint32_t> idx(batch * m * k);
            std::vector<T> rel(batch * m * k * 3);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& sg = geometry[b]->stages.at(si);
                if (sg.groups.at(ci).size() != m * k) throw ContractError("forward: geometry does not match the model");
                for (std::size_t j = 0; j < m * k; ++j) {
                    const std::uint32_t p = sg.groups[ci][j];
                    if (p >= n_prev) throw IndexError("forward: group index outside the previous stage");
                    const std::size_t row = b * m * k + j;
                    idx[row] = static_cast<std::uint32_t>(b * n_prev + p);
                    for (int c = 0; c < 3; ++c)
                        rel[row * 3 + c] =
                            static_cast<T>(xyz[(b * n_prev + p) * 3 + c]) - static_cast<T>(sg.xyz[(j / k) * 3 + c]);
                }
            }
            Tensor<T> x({batch * m * k, 3}, std::move(rel));
            if (feats.defined()) x = concat<T>({x, gather_rows(feats, idx)}, 1);
            x = apply_mlp(plan_.stage_layers[si][ci], x, sel, opt_idx, opt);
            scale_out.push_back(group_max(x, k));
        }
        return scale_out.size() == 1 ? scale_out[0] : concat<T>(scale_out, 1);
    }

    Tensor<T> xyz_tensor(std::span<const float> xyz) const {
        std::vector<T> v(xyz.begin(), xyz.end());
        return Tensor<T>({xyz.size() / 3, 3}, std::move(v));
    }

    Tensor<T> apply_mlp(const std::vector<int>& ids, Tensor<T> x, const SubnetSelection& sel,
                        const std::vector<int>& opt_idx, const ForwardOptions& opt) {
        for (int li : ids) x = apply_layer(static_cast<std::size_t>(li), x, sel, opt_idx, opt);
        return x;
    }

    Tensor<T> apply_layer(std::size_t i, const Tensor<T>& x, const SubnetSelection& sel, const std::vector<int>& opt_idx,
                          const ForwardOptions& opt) {
        const auto& l = plan_.layers[i];
        auto& p = layers_[i];
        std::vector<ColumnRange> ranges;
        std::size_t offset = 0;
        for (const auto& g : l.in_segments) {
            ranges.push_back({offset, g.source < 0 ? g.full : sel.widths[g.source]});
            offset += g.full;
        }
        const std::size_t out = sel.widths[i];
        const bool whole = out == l.full_out && input_width(plan_, i, sel.widths) == l.full_in();
        Tensor<T> w = whole ? p.weight.value : slice_block(p.weight.value, out, ranges);
        Tensor<T> y = linear(x, w, slice_leading(p.bias.value, out));
        if (!l.has_norm) return y;
        const int o = opt_idx[i];
        auto& ns = p.norms[o];
        BatchNormOptions bo;
        bo.training = opt.training;
        bo.relu = true;
        switch (opt.stats) {
            case StatsPolicy::all: bo.update_stats = true; break;
            case StatsPolicy::none: bo.update_stats = false; break;
            case StatsPolicy::skip_tiny: bo.update_stats = o != 0; break;
            case StatsPolicy::tiny_only: bo.update_stats = o == 0; break;
        }
        return batch_norm(y, ns.gamma.value, ns.beta.value, NormStats<T>{ns.running_mean, ns.running_var}, bo);
    }

    SupernetSpec spec_;
    LayerPlan plan_;
    ExpandOptions options_;
    std::vector<LayerParams<T>> layers_;
};

/// Spec whose full widths are the given per-layer widths.
inline SupernetSpec spec_with_widths(const SupernetSpec& spec, const LayerPlan& plan,
                                     const std::vector<std::uint32_t>& widths) {
    SupernetSpec out = spec;
    for (std::size_t si = 0; si < out.stages.size(); ++si)
        for (std::size_t ci = 0; ci < out.stages[si].scales.size(); ++ci)
            for (std::size_t li = 0; li < out.stages[si].scales[ci].mlp.size(); ++li)
                out.stages[si].scales[ci].mlp[li] = widths[plan.stage_layers[si][ci][li]];
    for (std::size_t hi = 0; hi < out.head.size(); ++hi) out.head[hi] = widths[plan.head_layers[hi]];
    return out;
}

/// An independent single-option network holding copies of the leading weight
/// slices (and the chosen normalization sets) of `sel`.
template <typename T>
Supernet<T> extract_subnet(const Supernet<T>& net, const SubnetSelection& sel) {
    const auto opt_idx = net.resolve(sel);
    const auto& plan = net.plan();
    Supernet<T> out(spec_with_widths(net.spec(), plan, sel.widths), single_option(sel.widths), 0);
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const auto& l = plan.layers[i];
        const auto& src = net.layers()[i];
        auto& dst = out.layers()[i];
        const std::size_t full_in = l.full_in();
        auto w = dst.weight.value.mutable_data();
        const std::size_t in_sel = dst.weight.value.dim(1);
        for (std::size_t r = 0; r < sel.widths[i]; ++r) {
            std::size_t src_off = 0, dst_col = 0;
            for (const auto& g : l.in_segments) {
                const std::size_t len = g.source < 0 ? g.full : sel.widths[g.source];
                for (std::size_t c = 0; c < len; ++c) w[r * in_sel + dst_col + c] = src.weight.value[r * full_in + src_off + c];
                src_off += g.full;
                dst_col += len;
            }
        }
        auto b = dst.bias.value.mutable_data();
        for (std::size_t r = 0; r < sel.widths[i]; ++r) b[r] = src.bias.value[r];
        if (l.has_norm) {
            const auto& sn = src.norms[opt_idx[i]];
            auto& dn = dst.norms[0];
            std::copy(sn.gamma.value.data().begin(), sn.gamma.value.data().end(), dn.gamma.value.mutable_data().begin());
            std::copy(sn.beta.value.data().begin(), sn.beta.value.data().end(), dn.beta.value.mutable_data().begin());
            dn.running_mean = sn.running_mean;
            dn.running_var = sn.running_var;
        }
    }
    return out;
}

}  // namespace t3d::models
