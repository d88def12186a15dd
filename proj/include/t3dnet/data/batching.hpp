#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/data/pointcloud.hpp"

namespace t3d::data {

/// B clouds of N points: points is B x N x 3 row-major; indices are positions
/// within the source split.
struct PointCloudBatch {
    std::vector<float> points;
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> indices;
    std::size_t points_per_cloud = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Fisher-Yates shuffle of [0, n) driven by Rng(derive_seed(seed, {epoch})),
/// swapping position i with uniform_index(rng, i + 1) for i = n-1 down to 1.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    return order;
}

/// Index groups for one epoch; the final short batch is kept.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                           std::uint64_t epoch, bool shuffle = true) {
    if (n == 0) throw ConfigError("cannot batch an empty split");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order;
    if (shuffle) {
        order = epoch_permutation(n, seed, epoch);
    } else {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    return out;
}

inline PointCloudBatch make_batch(std::span<const PointCloud> split, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("make_batch: no indices");
    PointCloudBatch b;
    b.points_per_cloud = split[indices[0]].size();
    b.points.reserve(indices.size() * b.points_per_cloud * 3);
    for (auto i : indices) {
        if (i >= split.size()) throw IndexError("make_batch: index " + std::to_string(i) + " outside split");
        const auto& s = split[i];
        if (s.size() != b.points_per_cloud) throw DimensionError("make_batch: clouds differ in point count");
        b.points.insert(b.points.end(), s.points.begin(), s.points.end());
        b.labels.push_back(s.label);
        b.indices.push_back(i);
    }
    return b;
}

/// All batches of one epoch over `split`.
inline std::vector<PointCloudBatch> batches(std::span<const PointCloud> split, std::size_t batch_size,
                                            std::uint64_t shuffle_seed, std::uint64_t epoch, bool shuffle = true) {
    std::vector<PointCloudBatch> out;
    for (const auto& idx : batch_indices(split.size(), batch_size, shuffle_seed, epoch, shuffle))
        out.push_back(make_batch(split, idx));
    return out;
}

}  // namespace t3d::data
