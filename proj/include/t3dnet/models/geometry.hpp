#pragma once

// Sampling and grouping for set abstraction. Distances are evaluated in double
// precision from float coordinates, so results do not depend on SIMD width.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/models/spec.hpp"

namespace t3d::models {

inline double sq_dist(std::span<const float> pts, std::size_t i, std::span<const float> other, std::size_t j) {
    const double dx = double(pts[i * 3]) - other[j * 3];
    const double dy = double(pts[i * 3 + 1]) - other[j * 3 + 1];
    const double dz = double(pts[i * 3 + 2]) - other[j * 3 + 2];
    return dx * dx + dy * dy + dz * dz;
}

/// Greedy farthest point sampling over N x 3 points. The first pick is
/// start_index; each later pick maximizes the distance to the picked set, ties
/// going to the lowest index.
inline std::vector<std::uint32_t> farthest_point_sampling(std::span<const float> points, std::size_t m,
                                                          std::size_t start_index = 0) {
    const std::size_t n = points.size() / 3;
    if (m < 1 || m > n)
        throw ContractError("farthest_point_sampling: m = " + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
    if (start_index >= n) throw ContractError("farthest_point_sampling: start index out of range");
    std::vector<std::uint32_t> picks{static_cast<std::uint32_t>(start_index)};
    picks.reserve(m);
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::size_t last = start_index;
    while (picks.size() < m) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = sq_dist(points, i, points, last);
            if (d < mind[i]) mind[i] = d;
            if (mind[i] > best_d) {
                best_d = mind[i];
                best = i;
            }
        }
        picks.push_back(static_cast<std::uint32_t>(best));
        last = best;
    }
    return picks;
}

/// For each centroid, k indices of points within `radius` in ascending index
/// order, padded by repeating the first hit. A centroid with an empty ball
/// gets k copies of its nearest point (lowest index on ties). Returns M x k.
inline std::vector<std::uint32_t> ball_query(std::span<const float> points, std::span<const float> centroids,
                                             double radius, std::size_t k) {
    const std::size_t n = points.size() / 3, m = centroids.size() / 3;
    if (n == 0) throw ContractError("ball_query: empty point set");
    if (!(radius > 0.0) || k < 1) throw ContractError("ball_query: radius and k must be positive");
    const double r2 = radius * radius;
    std::vector<std::uint32_t> out(m * k);
    for (std::size_t c = 0; c < m; ++c) {
        std::uint32_t* row = out.data() + c * k;
        std::size_t found = 0, nearest = 0;
        double nearest_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n && found < k; ++i) {
            const double d = sq_dist(points, i, centroids, c);
            if (d <= r2) row[found++] = static_cast<std::uint32_t>(i);
            if (d < nearest_d) {
                nearest_d = d;
                nearest = i;
            }
        }
        // an empty ball means the scan above visited every point
        if (found == 0) row[found++] = static_cast<std::uint32_t>(nearest);
        for (std::size_t j = found; j < k; ++j) row[j] = row[0];
    }
    return out;
}

inline std::vector<float> gather_points(std::span<const float> points, std::span<const std::uint32_t> idx) {
    std::vector<float> out(idx.size() * 3);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int c = 0; c < 3; ++c) out[i * 3 + c] = points[idx[i] * 3 + c];
    return out;
}

/// Sampling and grouping results of one stage for one cloud.
struct StageGeometry {
    std::vector<std::uint32_t> centroids;            // indices into the previous stage's points
    std::vector<float> xyz;                          // centroid coordinates, M x 3
    std::vector<std::vector<std::uint32_t>> groups;  // per scale, M x nsample indices into previous points
};

/// Geometry of every non-group-all stage for one cloud. It depends only on the
/// coordinates, never on weights, so it can be computed once per sample.
struct CloudGeometry {
    std::vector<StageGeometry> stages;
};

inline CloudGeometry compute_geometry(const SupernetSpec& spec, std::span<const float> points) {
    CloudGeometry g;
    std::vector<float> prev(points.begin(), points.end());
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const auto& st = spec.stages[si];
        if (st.group_all) break;
        const std::size_t n = prev.size() / 3;
        if (st.npoint > n)
            throw ContractError("stage " + std::to_string(si + 1) + " needs " + std::to_string(st.npoint) +
                                " points but the input has " + std::to_string(n));
        StageGeometry sg;
        sg.centroids = farthest_point_sampling(prev, st.npoint, 0);
        sg.xyz = gather_points(prev, sg.centroids);
        for (const auto& sc : st.scales) sg.groups.push_back(ball_query(prev, sg.xyz, sc.radius, sc.nsample));
        prev = sg.xyz;
        g.stages.push_back(std::move(sg));
    }
    return g;
}

}  // namespace t3d::models
