#include "lvpm3/vtok.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"
#include "binary_io.hpp"

namespace lvpm3::vision {

using detail::ByteReader;
using detail::put_u16;
using detail::put_u32;

std::vector<char> encode_vtok(const std::vector<VisualTokens>& records) {
    const std::size_t mv = records.empty() ? 0 : records.front().num_tokens;
    const std::size_t dv = records.empty() ? 0 : records.front().width;
    std::vector<char> out(kVtokMagic, kVtokMagic + 4);
    put_u32(out, kVtokVersion);
    put_u32(out, static_cast<std::uint32_t>(records.size()));
    put_u32(out, static_cast<std::uint32_t>(mv));
    put_u32(out, static_cast<std::uint32_t>(dv));
    std::map<std::string, bool> seen;
    for (const auto& r : records) {
        if (r.num_tokens != mv || r.width != dv) {
            throw FormatError("VTOK record '" + r.image_id + "' is " + std::to_string(r.num_tokens) +
                              "x" + std::to_string(r.width) + ", file uses " + std::to_string(mv) +
                              "x" + std::to_string(dv));
        }
        if (r.num_tokens == 0 || r.width == 0 || r.values.size() != mv * dv) {
            throw FormatError("VTOK record '" + r.image_id + "' has inconsistent dimensions");
        }
        if (r.image_id.size() > UINT16_MAX) {
            throw FormatError("VTOK image id longer than 65535 bytes");
        }
        if (!seen.emplace(r.image_id, true).second) {
            throw FormatError("duplicate VTOK image id '" + r.image_id + "'");
        }
        put_u16(out, static_cast<std::uint16_t>(r.image_id.size()));
        out.insert(out.end(), r.image_id.begin(), r.image_id.end());
        for (float v : r.values) {
            if (!std::isfinite(v)) {
                throw FormatError("VTOK record '" + r.image_id + "' contains a non-finite value");
            }
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

void write_vtok(const std::vector<VisualTokens>& records, const std::filesystem::path& path) {
    const auto bytes = encode_vtok(records);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write VTOK file " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("failed writing VTOK file " + path.string());
    }
}

VisualTokenMap decode_vtok(const std::vector<char>& bytes) {
    ByteReader in(bytes, "VTOK");
    in.need(4, "magic");
    if (std::memcmp(bytes.data(), kVtokMagic, 4) != 0) {
        throw FormatError("bad VTOK magic at byte offset 0");
    }
    in.str(4, "magic");
    const std::uint32_t version = in.u32("version");
    if (version != kVtokVersion) {
        throw FormatError("unsupported VTOK version " + std::to_string(version) + " at byte offset 4");
    }
    const std::uint32_t count = in.u32("count");
    const std::uint32_t mv = in.u32("M_v");
    const std::uint32_t dv = in.u32("d_v");
    if (count > 0 && (mv == 0 || dv == 0)) {
        throw FormatError("VTOK header declares zero-sized visual tokens at byte offset 12");
    }
    VisualTokenMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t record_start = in.offset();
        const std::uint16_t len = in.u16("id length");
        VisualTokens r;
        r.image_id = in.str(len, "image id");
        r.num_tokens = mv;
        r.width = dv;
        in.need(static_cast<std::size_t>(mv) * dv * 4, "token values");
        r.values.resize(static_cast<std::size_t>(mv) * dv);
        for (float& v : r.values) {
            v = in.f32("token values");
            if (!std::isfinite(v)) {
                throw FormatError("non-finite visual token value in record '" + r.image_id +
                                  "' before byte offset " + std::to_string(in.offset()));
            }
        }
        if (out.count(r.image_id)) {
            throw FormatError("duplicate VTOK image id '" + r.image_id + "' at byte offset " +
                              std::to_string(record_start));
        }
        out.emplace(r.image_id, std::move(r));
    }
    if (!in.done()) {
        throw FormatError("VTOK has trailing bytes at offset " + std::to_string(in.offset()) +
                          " after the declared " + std::to_string(count) + " records");
    }
    return out;
}

VisualTokenMap read_vtok(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open VTOK file " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_vtok(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

VisualTokens pseudo_visual_tokens(const std::string& image_id, std::size_t num_tokens,
                                  std::size_t width, std::uint64_t seed) {
    if (num_tokens == 0 || width == 0) {
        throw ConfigError("pseudo visual tokens need M_v >= 1 and d_v >= 1");
    }
    VisualTokens out;
    out.image_id = image_id;
    out.num_tokens = num_tokens;
    out.width = width;
    out.values.resize(num_tokens * width);
    std::uint64_t state = mix64(hash_string(image_id), seed);
    for (std::size_t r = 0; r < num_tokens; ++r) {
        double norm2 = 0;
        std::vector<double> row(width);
        // All-zero rows cannot be normalized; redraw (astronomically rare).
        while (norm2 == 0) {
            norm2 = 0;
            for (double& v : row) {
                state = mix64(state);
                v = static_cast<double>(state >> 11) * 0x1.0p-52 - 1.0;
                norm2 += v * v;
            }
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < width; ++c) {
            out.values[r * width + c] = static_cast<float>(row[c] * inv);
        }
    }
    return out;
}

} // namespace lvpm3::vision
