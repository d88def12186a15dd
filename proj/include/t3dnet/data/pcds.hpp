#pragma once

// PCDS binary point-cloud files and the on-disk dataset directory.
//
// PCDS layout (little-endian):
//   magic "PCDS" | version u32 = 1 | num_classes u32 | points_per_cloud u32 |
//   num_samples u32 | num_samples x ( label u32 | points_per_cloud x 3 float32 )
//
// A dataset directory holds train.pcds, test.pcds and manifest.json:
//   { "format": "t3dnet-dataset", "version": 1, "name": str,
//     "class_names": [str], "points_per_cloud": int, "seed": int,
//     "splits": { "train": {"file": str, "num_samples": int}, "test": {...} } }

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"
#include "t3dnet/data/pointcloud.hpp"

namespace t3d::data {

namespace io = t3d::io;

inline constexpr std::uint32_t kPcdsVersion = 1;
inline constexpr std::size_t kPcdsHeaderBytes = 20;

struct PcdsFile {
    std::uint32_t num_classes = 0;
    std::uint32_t points_per_cloud = 0;
    std::vector<PointCloud> samples;
};

inline std::vector<std::uint8_t> encode_pcds(const PcdsFile& f) {
    std::vector<std::uint8_t> out;
    out.reserve(kPcdsHeaderBytes + f.samples.size() * (4 + 12 * static_cast<std::size_t>(f.points_per_cloud)));
    for (char c : {'P', 'C', 'D', 'S'}) out.push_back(static_cast<std::uint8_t>(c));
    io::put_u32(out, kPcdsVersion);
    io::put_u32(out, f.num_classes);
    io::put_u32(out, f.points_per_cloud);
    io::put_u32(out, static_cast<std::uint32_t>(f.samples.size()));
    for (const auto& s : f.samples) {
        if (s.size() != f.points_per_cloud || s.points.size() % 3 != 0)
            throw ContractError("encode_pcds: sample has " + std::to_string(s.size()) + " points, expected " +
                                std::to_string(f.points_per_cloud));
        if (s.label >= f.num_classes)
            throw ContractError("encode_pcds: label " + std::to_string(s.label) + " >= num_classes " +
                                std::to_string(f.num_classes));
        io::put_u32(out, s.label);
        for (float v : s.points) io::put_f32(out, v);
    }
    return out;
}

inline PcdsFile decode_pcds(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes);
    r.magic("PCDS");
    const std::size_t version_at = r.pos();
    const auto version = r.u32("header");
    if (version != kPcdsVersion)
        throw FormatError("unsupported PCDS version " + std::to_string(version), version_at);
    PcdsFile f;
    f.num_classes = r.u32("header");
    f.points_per_cloud = r.u32("header");
    const auto n = r.u32("header");
    if (f.num_classes == 0) throw FormatError("num_classes is zero", 8);
    if (f.points_per_cloud == 0) throw FormatError("points_per_cloud is zero", 12);

    const std::size_t sample_bytes = 4 + 12 * static_cast<std::size_t>(f.points_per_cloud);
    f.samples.reserve(std::min<std::size_t>(n, r.remaining() / sample_bytes + 1));
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::size_t at = r.pos();
        auto blob = r.bytes(sample_bytes, "sample " + std::to_string(i));
        PointCloud pc;
        pc.label = io::get_u32(blob, 0);
        if (pc.label >= f.num_classes)
            throw FormatError("sample " + std::to_string(i) + " label " + std::to_string(pc.label) +
                                  " >= num_classes " + std::to_string(f.num_classes),
                              at);
        pc.points.resize(3 * static_cast<std::size_t>(f.points_per_cloud));
        for (std::size_t k = 0; k < pc.points.size(); ++k) {
            pc.points[k] = io::get_f32(blob, 4 + 4 * k);
            if (!std::isfinite(pc.points[k]))
                throw FormatError("non-finite coordinate in sample " + std::to_string(i), at + 4 + 4 * k);
        }
        f.samples.push_back(std::move(pc));
    }
    if (r.remaining() != 0)
        throw FormatError(std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(n) + " samples",
                          r.pos());
    return f;
}

inline void write_pcds(const PcdsFile& f, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_pcds(f));
}

inline PcdsFile read_pcds(const std::filesystem::path& path) { return decode_pcds(io::read_file(path)); }

inline nlohmann::json dataset_manifest(const Dataset& d) {
    return {{"format", "t3dnet-dataset"},
            {"version", 1},
            {"name", d.name},
            {"class_names", d.class_names},
            {"points_per_cloud", d.points_per_cloud},
            {"seed", d.seed},
            {"splits",
             {{"train", {{"file", "train.pcds"}, {"num_samples", d.train.size()}}},
              {"test", {{"file", "test.pcds"}, {"num_samples", d.test.size()}}}}}};
}

/// Writes `dir`/train.pcds, `dir`/test.pcds and `dir`/manifest.json.
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const auto nc = static_cast<std::uint32_t>(d.num_classes());
    write_pcds(PcdsFile{nc, d.points_per_cloud, d.train}, dir / "train.pcds");
    write_pcds(PcdsFile{nc, d.points_per_cloud, d.test}, dir / "test.pcds");
    io::write_text_atomic(dir / "manifest.json", dataset_manifest(d).dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    const auto bytes = io::read_file(dir / "manifest.json");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    Dataset d;
    std::string train_file, test_file;
    try {
        d.name = m.at("name").get<std::string>();
        d.class_names = m.at("class_names").get<std::vector<std::string>>();
        d.points_per_cloud = m.at("points_per_cloud").get<std::uint32_t>();
        d.seed = m.at("seed").get<std::uint64_t>();
        train_file = m.at("splits").at("train").at("file").get<std::string>();
        test_file = m.at("splits").at("test").at("file").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    auto load = [&](const std::string& file) {
        PcdsFile f;
        try {
            f = read_pcds(dir / file);
        } catch (const FormatError& e) {
            throw FormatError(file + ": " + e.reason(), e.offset());
        }
        if (f.num_classes != d.num_classes() || f.points_per_cloud != d.points_per_cloud)
            throw FormatError(file + ": header disagrees with manifest.json", 8);
        return std::move(f.samples);
    };
    d.train = load(train_file);
    d.test = load(test_file);
    return d;
}

}  // namespace t3d::data
