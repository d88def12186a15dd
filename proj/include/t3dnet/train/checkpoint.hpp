#pragma once

// T3DN checkpoint files (little-endian):
//   magic "T3DN" | version u32 = 1 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank, f32 payload |
//   config digest (32 bytes) | epoch u32

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"
#include "t3dnet/core/tensor.hpp"
#include "t3dnet/models/spec.hpp"
#include "t3dnet/models/supernet.hpp"

namespace t3d::train {

inline constexpr std::uint32_t kT3dnVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
    std::vector<NamedTensor> tensors;
    models::Digest digest{};
    std::uint32_t epoch = 0;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

/// Bitwise equality of tensors, digest and epoch.
inline bool identical(const Checkpoint& a, const Checkpoint& b) {
    return a.tensors == b.tensors && a.digest == b.digest && a.epoch == b.epoch;
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    std::vector<std::uint8_t> out{'T', '3', 'D', 'N'};
    io::put_u32(out, kT3dnVersion);
    io::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        if (t.name.size() > 0xffff) throw ContractError("checkpoint: tensor name too long");
        if (t.shape.size() > 0xff) throw ContractError("checkpoint: tensor rank too large");
        if (shape_numel(t.shape) != t.data.size())
            throw ContractError("checkpoint: tensor " + t.name + " payload does not match its shape");
        io::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.data) io::put_f32(out, v);
    }
    out.insert(out.end(), c.digest.begin(), c.digest.end());
    io::put_u32(out, c.epoch);
    return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes);
    r.magic("T3DN");
    const std::size_t version_at = r.pos();
    const auto version = r.u32("header");
    if (version != kT3dnVersion) throw FormatError("unsupported T3DN version " + std::to_string(version), version_at);
    const auto count = r.u32("header");
    Checkpoint c;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto len = r.u16("tensor name length");
        const auto name = r.bytes(len, "tensor name");
        t.name.assign(name.begin(), name.end());
        const auto rank = r.u8("tensor rank");
        std::size_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            t.shape.push_back(r.u32("tensor dims"));
            n *= t.shape.back();
        }
        if (n > r.remaining() / 4) r.need(n * 4, "payload of " + t.name);
        const auto payload = r.bytes(n * 4, "payload of " + t.name);
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = io::get_f32(payload, j * 4);
        c.tensors.push_back(std::move(t));
    }
    const auto digest = r.bytes(32, "config digest");
    std::copy(digest.begin(), digest.end(), c.digest.begin());
    c.epoch = r.u32("epoch");
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.pos());
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.reason(), e.offset());
    }
}

/// Snapshot of every parameter and running statistic of `net`, plus `extra`.
template <typename T>
Checkpoint capture(models::Supernet<T>& net, std::uint32_t epoch, std::span<const Parameter<T>> extra = {}) {
    Checkpoint c;
    c.digest = models::spec_digest(net.spec());
    c.epoch = epoch;
    for (const auto& b : net.buffers()) c.tensors.push_back({b.name, b.shape, {b.data.begin(), b.data.end()}});
    for (const auto& p : extra) {
        const auto d = p.value.data();
        c.tensors.push_back({p.name, p.value.shape(), {d.begin(), d.end()}});
    }
    return c;
}

/// Training-only tensors (the hint map) that a plain model restore skips.
inline bool is_auxiliary(const std::string& name) { return name.rfind("hint.", 0) == 0; }

/// Copies a checkpoint's tensors into `net` (and into `extra`, by name).
/// Every model buffer must be present with a matching shape; other tensors
/// must be auxiliary. A digest that differs from the model's config is an
/// error unless `allow_digest_mismatch`.
template <typename T>
void restore(models::Supernet<T>& net, const Checkpoint& c, bool allow_digest_mismatch = false,
             std::span<Parameter<T>> extra = {}) {
    if (!allow_digest_mismatch && c.digest != models::spec_digest(net.spec()))
        throw FormatError("config digest mismatch: checkpoint " + models::hex(c.digest) + ", model " +
                              models::hex(models::spec_digest(net.spec())),
                          0);
    std::size_t used = 0;
    auto copy_into = [&](const std::string& name, const Shape& shape, std::span<T> dst) {
        const NamedTensor* t = c.find(name);
        if (!t) throw FormatError("checkpoint has no tensor " + name, 0);
        if (t->shape != shape)
            throw FormatError("tensor " + name + " has shape " + detail::shape_str(t->shape) + ", model expects " +
                                  detail::shape_str(shape),
                              0);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->data[i]);
        ++used;
    };
    for (auto& b : net.buffers()) copy_into(b.name, b.shape, b.data);
    for (auto& p : extra) copy_into(p.name, p.value.shape(), p.value.mutable_data());
    std::size_t expected = c.tensors.size();
    for (const auto& t : c.tensors)
        if (is_auxiliary(t.name) && std::none_of(extra.begin(), extra.end(), [&](const auto& p) { return p.name == t.name; }))
            --expected;
    if (used != expected)
        throw FormatError("checkpoint holds " + std::to_string(expected - used) + " tensors the model lacks", 0);
}

}  // namespace t3d::train
