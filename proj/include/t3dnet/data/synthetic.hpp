#pragma once

// Parametric-shape point-cloud generator for desk-scale experiments.
//
// Each sample draws points uniformly (by area) on a primitive surface, adds
// isotropic Gaussian jitter, rotates about the z axis by a uniform angle and
// normalizes to the unit sphere. Sample (split, class, index) owns the RNG
// stream derive_seed(seed, {split, class, index}), so datasets are a pure
// function of (spec, seed) and generation order does not matter.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/data/pointcloud.hpp"

namespace t3d::data {

enum class Primitive { sphere, cube, cylinder, cone, torus, tetrahedron, ellipsoid, disk };

inline constexpr std::array<std::string_view, 8> kPrimitiveNames = {
    "sphere", "cube", "cylinder", "cone", "torus", "tetrahedron", "ellipsoid", "disk"};

// Primitive dimensions, before normalization.
inline constexpr double kCubeHalfEdge = 1.0;
inline constexpr double kCylinderRadius = 0.5, kCylinderHalfHeight = 1.0;
inline constexpr double kConeRadius = 1.0, kConeHalfHeight = 1.0;
inline constexpr double kTorusMajor = 1.0, kTorusMinor = 0.35;
inline constexpr std::array<double, 3> kEllipsoidAxes = {1.0, 0.6, 0.4};

inline Primitive parse_primitive(std::string_view name) {
    for (std::size_t i = 0; i < kPrimitiveNames.size(); ++i)
        if (kPrimitiveNames[i] == name) return static_cast<Primitive>(i);
    throw ConfigError("unknown primitive class '" + std::string(name) +
                      "' (expected sphere, cube, cylinder, cone, torus, tetrahedron, ellipsoid or disk)");
}

namespace detail {

using Vec3 = std::array<double, 3>;

inline Vec3 unit_vector(Rng& rng) {
    for (;;) {
        Vec3 v{normal01(rng), normal01(rng), normal01(rng)};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

inline Vec3 on_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
    const double s = std::sqrt(uniform01(rng));
    const double r2 = uniform01(rng);
    const double wa = 1.0 - s, wb = s * (1.0 - r2), wc = s * r2;
    return {wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1], wa * a[2] + wb * b[2] + wc * c[2]};
}

inline Vec3 on_disk(double radius, double z, Rng& rng) {
    const double r = radius * std::sqrt(uniform01(rng));
    const double t = 2.0 * std::numbers::pi * uniform01(rng);
    return {r * std::cos(t), r * std::sin(t), z};
}

inline Vec3 sample_one(Primitive kind, Rng& rng) {
    constexpr double pi = std::numbers::pi;
    switch (kind) {
        case Primitive::sphere:
            return unit_vector(rng);
        case Primitive::cube: {
            const int face = static_cast<int>(uniform_index(rng, 6));
            const double u = uniform(rng, -kCubeHalfEdge, kCubeHalfEdge);
            const double v = uniform(rng, -kCubeHalfEdge, kCubeHalfEdge);
            const double s = (face & 1) ? kCubeHalfEdge : -kCubeHalfEdge;
            switch (face / 2) {
                case 0: return {s, u, v};
                case 1: return {u, s, v};
                default: return {u, v, s};
            }
        }
        case Primitive::cylinder: {
            const double side = 2.0 * pi * kCylinderRadius * 2.0 * kCylinderHalfHeight;
            const double cap = pi * kCylinderRadius * kCylinderRadius;
            const double pick = uniform01(rng) * (side + 2.0 * cap);
            if (pick < side) {
                const double t = 2.0 * pi * uniform01(rng);
                return {kCylinderRadius * std::cos(t), kCylinderRadius * std::sin(t),
                        uniform(rng, -kCylinderHalfHeight, kCylinderHalfHeight)};
            }
            return on_disk(kCylinderRadius, pick < side + cap ? kCylinderHalfHeight : -kCylinderHalfHeight, rng);
        }
        case Primitive::cone: {
            const double h = 2.0 * kConeHalfHeight;
            const double slant = std::sqrt(kConeRadius * kConeRadius + h * h);
            const double lateral = pi * kConeRadius * slant;
            const double base = pi * kConeRadius * kConeRadius;
            if (uniform01(rng) * (lateral + base) < lateral) {
                // distance from apex ~ sqrt(u) gives uniform area on the lateral surface
                const double f = std::sqrt(uniform01(rng));
                const double t = 2.0 * pi * uniform01(rng);
                return {f * kConeRadius * std::cos(t), f * kConeRadius * std::sin(t), kConeHalfHeight - f * h};
            }
            return on_disk(kConeRadius, -kConeHalfHeight, rng);
        }
        case Primitive::torus: {
            // rejection on the minor angle: area element is proportional to R + r cos(v)
            for (;;) {
                const double u = 2.0 * pi * uniform01(rng);
                const double v = 2.0 * pi * uniform01(rng);
                const double w = (kTorusMajor + kTorusMinor * std::cos(v)) / (kTorusMajor + kTorusMinor);
                if (uniform01(rng) <= w) {
                    const double ring = kTorusMajor + kTorusMinor * std::cos(v);
                    return {ring * std::cos(u), ring * std::sin(u), kTorusMinor * std::sin(v)};
                }
            }
        }
        case Primitive::tetrahedron: {
            static constexpr std::array<Vec3, 4> v = {Vec3{1, 1, 1}, Vec3{1, -1, -1}, Vec3{-1, 1, -1}, Vec3{-1, -1, 1}};
            static constexpr std::array<std::array<int, 3>, 4> faces = {
                std::array<int, 3>{0, 1, 2}, std::array<int, 3>{0, 1, 3}, std::array<int, 3>{0, 2, 3},
                std::array<int, 3>{1, 2, 3}};
            const auto& f = faces[uniform_index(rng, 4)];
            return on_triangle(v[f[0]], v[f[1]], v[f[2]], rng);
        }
        case Primitive::ellipsoid: {
            // map the unit sphere and accept by the ratio of surface elements
            const auto [a, b, c] = kEllipsoidAxes;
            const double wmax = std::max({b * c, a * c, a * b});
            for (;;) {
                Vec3 n = unit_vector(rng);
                const double w = std::sqrt((b * c * n[0]) * (b * c * n[0]) + (a * c * n[1]) * (a * c * n[1]) +
                                           (a * b * n[2]) * (a * b * n[2]));
                if (uniform01(rng) * wmax <= w) return {a * n[0], b * n[1], c * n[2]};
            }
        }
        case Primitive::disk:
            return on_disk(1.0, 0.0, rng);
    }
    throw ContractError("unhandled primitive");
}

}  // namespace detail

inline bool centrally_symmetric(Primitive kind) {
    return kind != Primitive::cone && kind != Primitive::tetrahedron;
}

/// n points uniform on the primitive surface, before jitter, rotation and
/// normalization. Row-major N x 3.
///
/// Centrally symmetric primitives are sampled in antipodal pairs (p, -p): each
/// point stays uniform on the surface and the centroid of an even-sized cloud
/// is exactly the origin.
inline std::vector<double> sample_primitive_surface(Primitive kind, std::size_t n, Rng& rng) {
    std::vector<double> out(n * 3);
    const bool paired = centrally_symmetric(kind);
    for (std::size_t i = 0; i < n; ++i) {
        if (paired && (i & 1)) {
            for (int k = 0; k < 3; ++k) out[i * 3 + k] = -out[(i - 1) * 3 + k];
            continue;
        }
        const auto p = detail::sample_one(kind, rng);
        out[i * 3] = p[0];
        out[i * 3 + 1] = p[1];
        out[i * 3 + 2] = p[2];
    }
    return out;
}

struct SyntheticSpec {
    std::vector<std::string> classes{kPrimitiveNames.begin(), kPrimitiveNames.end()};
    std::uint32_t train_per_class = 100;
    std::uint32_t test_per_class = 30;
    std::uint32_t points_per_cloud = 256;
    double noise_sigma = 0.01;
};

enum class Split : std::uint64_t { train = 0, test = 1 };

/// One fully processed synthetic cloud.
inline PointCloud generate_sample(Primitive kind, std::uint32_t label, std::uint32_t points, double sigma,
                                  std::uint64_t seed, Split split, std::uint64_t index) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(split), label, index}));
    auto pts = sample_primitive_surface(kind, points, rng);
    if (sigma > 0.0)
        for (double& v : pts) v += sigma * normal01(rng);
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t i = 0; i < points; ++i) {
        const double x = pts[i * 3], y = pts[i * 3 + 1];
        pts[i * 3] = c * x - s * y;
        pts[i * 3 + 1] = s * x + c * y;
    }
    return PointCloud{to_float(normalize_unit_sphere(pts)), label};
}

inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.classes.size() < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (spec.points_per_cloud < 16) throw ConfigError("points_per_cloud must be >= 16");
    if (spec.noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    std::vector<Primitive> kinds;
    for (const auto& name : spec.classes) kinds.push_back(parse_primitive(name));

    Dataset ds;
    ds.name = "synthetic";
    ds.class_names = spec.classes;
    ds.points_per_cloud = spec.points_per_cloud;
    ds.seed = seed;
    for (std::uint32_t c = 0; c < kinds.size(); ++c) {
        for (std::uint32_t i = 0; i < spec.train_per_class; ++i)
            ds.train.push_back(generate_sample(kinds[c], c, spec.points_per_cloud, spec.noise_sigma, seed, Split::train, i));
        for (std::uint32_t i = 0; i < spec.test_per_class; ++i)
            ds.test.push_back(generate_sample(kinds[c], c, spec.points_per_cloud, spec.noise_sigma, seed, Split::test, i));
    }
    return ds;
}

}  // namespace t3d::data
