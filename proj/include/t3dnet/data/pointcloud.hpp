#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"

namespace t3d::data {

/// One labelled cloud; points are stored row-major as N x 3 float32.
struct PointCloud {
    std::vector<float> points;
    std::uint32_t label = 0;

    std::size_t size() const noexcept { return points.size() / 3; }
    bool operator==(const PointCloud&) const = default;
};

struct Dataset {
    std::string name;
    std::vector<std::string> class_names;
    std::vector<PointCloud> train;
    std::vector<PointCloud> test;
    std::uint32_t points_per_cloud = 0;
    std::uint64_t seed = 0;

    std::size_t num_classes() const noexcept { return class_names.size(); }
    bool operator==(const Dataset&) const = default;
};

/// Subtracts the centroid and scales so the largest point norm is exactly 1.
inline std::vector<double> normalize_unit_sphere(std::span<const double> points) {
    if (points.empty() || points.size() % 3 != 0)
        throw ContractError("normalize_unit_sphere: expected a non-empty N x 3 buffer");
    const std::size_t n = points.size() / 3;
    double c[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) c[k] += points[i * 3 + k];
    for (double& v : c) v /= static_cast<double>(n);
    std::vector<double> out(points.size());
    double max_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double d = points[i * 3 + k] - c[k];
            out[i * 3 + k] = d;
            s += d * d;
        }
        max_norm = std::max(max_norm, std::sqrt(s));
    }
    if (!(max_norm > 1e-12)) throw GeometryError("normalize_unit_sphere: all points coincide");
    for (double& v : out) v /= max_norm;
    return out;
}

inline std::vector<float> to_float(std::span<const double> v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

}  // namespace t3d::data
