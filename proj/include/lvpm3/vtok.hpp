#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lvpm3::vision {

/// Visual token matrix [num_tokens x width] for one image, as produced by a frozen
/// vision backbone.
struct VisualTokens {
    std::string image_id;
    std::size_t num_tokens = 0; // M_v
    std::size_t width = 0;      // d_v
    std::vector<float> values;  // row-major

    bool operator==(const VisualTokens&) const = default;
};

using VisualTokenMap = std::map<std::string, VisualTokens>;

inline constexpr char kVtokMagic[4] = {'V', 'T', 'O', 'K'};
inline constexpr std::uint32_t kVtokVersion = 1;

/// Layout (little-endian): "VTOK", u32 version, u32 count, u32 M_v, u32 d_v, then per
/// record u16 id length, UTF-8 id, M_v * d_v float32.
void write_vtok(const std::vector<VisualTokens>& records, const std::filesystem::path& path);
std::vector<char> encode_vtok(const std::vector<VisualTokens>& records);

VisualTokenMap read_vtok(const std::filesystem::path& path);
VisualTokenMap decode_vtok(const std::vector<char>& bytes);

/// Deterministic stand-in features: each row is a unit-norm vector derived from
/// hash(image_id, seed). Identical on every platform.
VisualTokens pseudo_visual_tokens(const std::string& image_id, std::size_t num_tokens,
                                  std::size_t width, std::uint64_t seed);

} // namespace lvpm3::vision
