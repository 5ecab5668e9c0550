#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"
#include "lvpm3/vtok.hpp"

using namespace lvpm3;
using namespace lvpm3::vision;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("lvpm3_vision_" + name);
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void dump(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("VTOK round trip is bit exact") {
    std::vector<VisualTokens> records;
    for (int i = 0; i < 3; ++i) records.push_back(pseudo_visual_tokens("img" + std::to_string(i), 4, 6, 9));
    // awkward but finite values
    records[1].values[0] = 1e-40f;
    records[1].values[1] = -0.0f;
    records[1].values[2] = 3.4e38f;
    const auto path = temp_file("roundtrip.vtok");
    write_vtok(records, path);
    auto loaded = read_vtok(path);
    REQUIRE(loaded.size() == 3);
    for (const auto& r : records) {
        const auto& got = loaded.at(r.image_id);
        CHECK(got.num_tokens == 4);
        CHECK(got.width == 6);
        CHECK(std::memcmp(got.values.data(), r.values.data(), r.values.size() * sizeof(float)) == 0);
    }

    const auto bytes = slurp(path);
    CHECK(bytes.size() == 20 + 3 * (2 + 4 + 4 * 6 * 4));
    CHECK(std::memcmp(bytes.data(), "VTOK", 4) == 0);
    CHECK(bytes[4] == 1); // version, little-endian
    CHECK(bytes[8] == 3); // count
}

TEST_CASE("VTOK round trip property over random finite floats") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t mv = 1 + rng.below(5), dv = 1 + rng.below(7), n = rng.below(5);
        std::vector<VisualTokens> records;
        for (std::size_t i = 0; i < n; ++i) {
            VisualTokens r{"id-" + std::to_string(trial) + "-" + std::to_string(i), mv, dv, {}};
            for (std::size_t k = 0; k < mv * dv; ++k) {
                float f;
                do {
                    const auto bits = static_cast<std::uint32_t>(rng.next());
                    std::memcpy(&f, &bits, 4);
                } while (!std::isfinite(f));
                r.values.push_back(f);
            }
            records.push_back(std::move(r));
        }
        auto decoded = decode_vtok(encode_vtok(records));
        REQUIRE(decoded.size() == n);
        for (const auto& r : records) {
            const auto& got = decoded.at(r.image_id);
            CHECK(std::memcmp(got.values.data(), r.values.data(), r.values.size() * 4) == 0);
        }
    }
}

TEST_CASE("VTOK empty file") {
    const auto path = temp_file("empty.vtok");
    write_vtok({}, path);
    CHECK(read_vtok(path).empty());
}

TEST_CASE("VTOK rejects malformed input with byte offsets") {
    std::vector<VisualTokens> records{pseudo_visual_tokens("a", 2, 3, 1), pseudo_visual_tokens("b", 2, 3, 1)};
    auto bytes = encode_vtok(records);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    try {
        decode_vtok(truncated);
        FAIL("truncated file accepted");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("offset") != std::string::npos);
        CHECK(msg.find("truncated") != std::string::npos);
    }

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_vtok(bad_magic), FormatError);

    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_vtok(bad_version), FormatError);

    auto more_declared = bytes;
    more_declared[8] = 3;
    CHECK_THROWS_AS(decode_vtok(more_declared), FormatError);

    auto fewer_declared = bytes;
    fewer_declared[8] = 1;
    CHECK_THROWS_AS(decode_vtok(fewer_declared), FormatError);

    // second record renamed to collide with the first
    auto dup = bytes;
    const std::size_t second_id = 20 + (2 + 1 + 2 * 3 * 4) + 2;
    dup[second_id] = 'a';
    try {
        decode_vtok(dup);
        FAIL("duplicate id accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }

    CHECK_THROWS_AS(encode_vtok({records[0], records[0]}), FormatError);
    CHECK_THROWS_AS(encode_vtok({records[0], pseudo_visual_tokens("c", 3, 3, 1)}), FormatError);
    auto nan_record = records[0];
    nan_record.values[0] = NAN;
    CHECK_THROWS_AS(encode_vtok({nan_record}), FormatError);

    const auto path = temp_file("trunc.vtok");
    dump(path, truncated);
    try {
        read_vtok(path);
        FAIL("truncated file accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(path.string()) != std::string::npos);
    }
    CHECK_THROWS_AS(read_vtok(temp_file("does_not_exist.vtok")), FormatError);
}

TEST_CASE("pseudo visual tokens") {
    const auto a = pseudo_visual_tokens("1000092795.jpg", 5, 16, 3);
    const auto b = pseudo_visual_tokens("1000092795.jpg", 5, 16, 3);
    CHECK(a == b);
    CHECK(pseudo_visual_tokens("1000092795.jpg", 5, 16, 4) != a);
    for (std::size_t r = 0; r < a.num_tokens; ++r) {
        double norm2 = 0;
        for (std::size_t c = 0; c < a.width; ++c) norm2 += double(a.values[r * 16 + c]) * a.values[r * 16 + c];
        CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-5);
    }
    // pinned values guard cross-platform determinism of the generator
    CHECK(std::bit_cast<std::uint32_t>(a.values[0]) == 0xbd9bc867u);
    CHECK(std::bit_cast<std::uint32_t>(a.values[1]) == 0xbe9fd9ecu);
    CHECK(std::bit_cast<std::uint32_t>(a.values[2]) == 0xbed6b819u);

    std::set<std::vector<float>> distinct;
    for (int i = 0; i < 500; ++i) {
        distinct.insert(pseudo_visual_tokens("img" + std::to_string(i), 2, 4, 0).values);
    }
    CHECK(distinct.size() == 500);

    CHECK_THROWS_AS(pseudo_visual_tokens("x", 0, 4, 0), ConfigError);
    const auto one = pseudo_visual_tokens("x", 1, 1, 0);
    CHECK(std::abs(std::abs(one.values[0]) - 1.0f) < 1e-6f);
}
