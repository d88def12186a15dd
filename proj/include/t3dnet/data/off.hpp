#pragma once

// OFF mesh ingestion and area-weighted surface sampling.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/rng.hpp"

namespace t3d::data {

struct TriMesh {
    std::vector<double> vertices;  // V x 3
    std::vector<std::array<std::uint32_t, 3>> faces;

    std::size_t num_vertices() const noexcept { return vertices.size() / 3; }
};

namespace detail {

struct OffLine {
    std::size_t number;
    std::vector<std::string_view> tokens;
};

inline std::vector<OffLine> off_lines(std::string_view text) {
    std::vector<OffLine> out;
    std::size_t number = 0, pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        ++number;
        pos = end + 1;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        OffLine ol{number, {}};
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::string_view(" \t\r\f\v").find(line[i]) != std::string_view::npos) ++i;
            std::size_t j = i;
            while (j < line.size() && std::string_view(" \t\r\f\v").find(line[j]) == std::string_view::npos) ++j;
            if (j > i) ol.tokens.push_back(line.substr(i, j - i));
            i = j;
        }
        if (!ol.tokens.empty()) out.push_back(std::move(ol));
        if (end == text.size()) break;
    }
    return out;
}

template <typename V>
V off_number(std::string_view tok, std::size_t line, const char* what) {
    V v{};
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError(std::string("expected ") + what + ", got '" + std::string(tok) + "'", line);
    if constexpr (std::is_floating_point_v<V>)
        if (!std::isfinite(v)) throw ParseError("non-finite coordinate '" + std::string(tok) + "'", line);
    return v;
}

}  // namespace detail

/// Parses OFF text: optional "OFF" header (also the fused "OFF<V> <F> <E>"
/// form seen in ModelNet), a counts line, V vertex lines and F polygon lines.
/// Polygons with more than three vertices are fan-triangulated; `#` starts a
/// comment. Errors carry 1-based line numbers.
inline TriMesh parse_off(std::string_view text) {
    const auto lines = detail::off_lines(text);
    std::size_t li = 0;
    if (lines.empty()) throw ParseError("empty OFF input", 1);

    std::vector<std::string_view> counts = lines[0].tokens;
    std::size_t counts_line = lines[0].number;
    if (counts[0].starts_with("OFF")) {
        const std::string_view rest = counts[0].substr(3);
        counts.erase(counts.begin());
        if (!rest.empty()) {
            counts.insert(counts.begin(), rest);
        } else if (counts.empty()) {
            if (lines.size() < 2) throw ParseError("missing counts line", lines[0].number + 1);
            counts = lines[1].tokens;
            counts_line = lines[1].number;
            li = 1;
        }
    }
    ++li;
    if (counts.size() < 2 || counts.size() > 3)
        throw ParseError("malformed counts line, expected 'V F E'", counts_line);
    const auto nv = detail::off_number<std::uint32_t>(counts[0], counts_line, "vertex count");
    const auto nf = detail::off_number<std::uint32_t>(counts[1], counts_line, "face count");
    if (counts.size() == 3) (void)detail::off_number<std::uint64_t>(counts[2], counts_line, "edge count");

    const std::size_t eof_line = lines.back().number + 1;
    TriMesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(nv) * 3);
    for (std::uint32_t v = 0; v < nv; ++v, ++li) {
        if (li >= lines.size())
            throw ParseError("unexpected end of input: expected " + std::to_string(nv) + " vertices, got " +
                                 std::to_string(v),
                             eof_line);
        const auto& l = lines[li];
        if (l.tokens.size() < 3) throw ParseError("vertex line needs 3 coordinates", l.number);
        for (int k = 0; k < 3; ++k) mesh.vertices.push_back(detail::off_number<double>(l.tokens[k], l.number, "number"));
    }
    for (std::uint32_t f = 0; f < nf; ++f, ++li) {
        if (li >= lines.size())
            throw ParseError("unexpected end of input: expected " + std::to_string(nf) + " faces, got " +
                                 std::to_string(f),
                             eof_line);
        const auto& l = lines[li];
        const auto n = detail::off_number<std::uint32_t>(l.tokens[0], l.number, "polygon vertex count");
        if (n < 3) throw ParseError("polygon needs at least 3 vertices", l.number);
        if (l.tokens.size() < 1 + static_cast<std::size_t>(n))
            throw ParseError("polygon declares " + std::to_string(n) + " vertices but lists " +
                                 std::to_string(l.tokens.size() - 1),
                             l.number);
        std::vector<std::uint32_t> idx(n);
        for (std::uint32_t k = 0; k < n; ++k) {
            idx[k] = detail::off_number<std::uint32_t>(l.tokens[1 + k], l.number, "vertex index");
            if (idx[k] >= nv)
                throw ParseError("vertex index " + std::to_string(idx[k]) + " out of range for " +
                                     std::to_string(nv) + " vertices",
                                 l.number);
        }
        for (std::uint32_t k = 1; k + 1 < n; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
    return mesh;
}

inline double triangle_area(const TriMesh& m, const std::array<std::uint32_t, 3>& f) {
    const double* a = &m.vertices[f[0] * 3];
    const double* b = &m.vertices[f[1] * 3];
    const double* c = &m.vertices[f[2] * 3];
    const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const double x = u[1] * v[2] - u[2] * v[1];
    const double y = u[2] * v[0] - u[0] * v[2];
    const double z = u[0] * v[1] - u[1] * v[0];
    return 0.5 * std::sqrt(x * x + y * y + z * z);
}

/// n points on the mesh surface: triangle chosen with probability proportional
/// to area, then uniform barycentric coordinates. Row-major N x 3, unnormalized.
inline std::vector<double> sample_mesh(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
    std::vector<double> cdf(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        total += triangle_area(mesh, mesh.faces[i]);
        cdf[i] = total;
    }
    if (!(total > 0.0)) throw GeometryError("sample_mesh: mesh has zero total surface area");

    Rng rng(seed);
    std::vector<double> out(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = uniform01(rng) * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
        if (it == cdf.end()) --it;
        const auto& f = mesh.faces[static_cast<std::size_t>(it - cdf.begin())];
        const double s = std::sqrt(uniform01(rng));
        const double r = uniform01(rng);
        const double w[3] = {1.0 - s, s * (1.0 - r), s * r};
        for (int k = 0; k < 3; ++k)
            out[i * 3 + k] = w[0] * mesh.vertices[f[0] * 3 + k] + w[1] * mesh.vertices[f[1] * 3 + k] +
                             w[2] * mesh.vertices[f[2] * 3 + k];
    }
    return out;
}

}  // namespace t3d::data
