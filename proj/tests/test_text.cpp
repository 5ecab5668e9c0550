#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "lvpm3/batching.hpp"
#include "lvpm3/bpe.hpp"
#include "lvpm3/corpus.hpp"
#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"

using namespace lvpm3;
using namespace lvpm3::text;

namespace {

// One caption in each of the seven benchmark languages.
const std::vector<std::string> kSevenLanguages{
    "A man in an orange hat starring at something.",
    "Ein Mann mit einem orangefarbenen Hut, der etwas anstarrt.",
    "Un homme avec un chapeau orange regardant quelque chose.",
    "Muž v oranžovém klobouku, který na něco zírá.",
    "Vīrietis oranžā cepurē kaut ko vēro.",
    "नारंगी टोपी में एक आदमी कुछ घूर रहा है।",
    "Turuncu şapkalı bir adam bir şeye bakıyor.",
};

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lvpm3_text_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& l : lines) out << l << '\n';
}

ParallelExample example_with_lengths(std::size_t src, std::size_t tgt, std::size_t id) {
    ParallelExample ex;
    ex.example_id = "ex" + std::to_string(id);
    ex.source_ids.assign(src, 10);
    ex.target_ids.assign(tgt, 10);
    return ex;
}

// Exhaustive search over every contiguous split of an ordered list; returns the fewest
// batches that respect the cap (or SIZE_MAX when infeasible).
std::size_t brute_force_min_batches(const std::vector<ParallelExample>& examples,
                                    const std::vector<std::size_t>& order, std::size_t cap) {
    const std::size_t n = order.size();
    std::size_t best = SIZE_MAX;
    for (std::size_t cuts = 0; cuts < (std::size_t{1} << (n - 1)); ++cuts) {
        std::size_t count = 0;
        bool ok = true;
        BatchIndices current;
        for (std::size_t i = 0; i < n && ok; ++i) {
            current.push_back(order[i]);
            if (i == n - 1 || (cuts >> i & 1)) {
                ok = padded_tokens(examples, current) <= cap;
                current.clear();
                ++count;
            }
        }
        if (ok) best = std::min(best, count);
    }
    return best;
}

} // namespace

TEST_CASE("vocabulary layout and tags") {
    Vocabulary v({"en", "de", "fr"});
    CHECK(v.size() == 8);
    CHECK(v.token(kPad) == "<pad>");
    CHECK(v.token(kMask) == "<mask>");
    CHECK(v.tag_id("en") == 5);
    CHECK(v.tag_id("fr") == 7);
    CHECK(v.language_of(6) == std::optional<std::string>("de"));
    CHECK(v.is_special(7));
    CHECK_FALSE(v.is_special(8));
    CHECK_THROWS_AS(v.tag_id("cs"), LanguageError);
    const TokenId a = v.add("a");
    CHECK(a == 8);
    CHECK(v.find("a") == std::optional<TokenId>(8));
    CHECK_THROWS_AS(v.add("a"), VocabularyError);
    CHECK_THROWS_AS(Vocabulary({"en", "en"}), LanguageError);
    v.add(std::string("<s>"));
    v.add(std::string(" \\\xc3\xa9"));
    auto round = Vocabulary::deserialize(v.serialize());
    CHECK(round.size() == v.size());
    for (TokenId id = 0; id < static_cast<TokenId>(v.size()); ++id) CHECK(round.token(id) == v.token(id));
    CHECK(round.languages() == v.languages());
}

TEST_CASE("bpe merges follow frequency with lexicographic ties") {
    const std::vector<std::string> corpus{"aaab aaab"};
    const std::size_t minimum = minimum_vocab_size(corpus, 0);
    CHECK(minimum == 5 + 3); // reserved + {' ', a, b}

    auto one = train_bpe(corpus, {minimum + 1, 1, {}});
    REQUIRE(one.merges().size() == 1);
    CHECK(one.merges()[0] == MergePair{"a", "a"});

    // Hand simulation of " aaab": [' ', a, a, a, b] -> merge (a, a) left to right.
    CHECK(one.segment("aaab")[0] == std::vector<std::string>{" ", "aa", "a", "b"});

    // Second round: (' ', aa), (aa, a), (a, b) all occur twice; ' ' sorts first.
    auto two = train_bpe(corpus, {minimum + 2, 1, {}});
    REQUIRE(two.merges().size() == 2);
    CHECK(two.merges()[1] == MergePair{" ", "aa"});
    CHECK(two.segment("aaab")[0] == std::vector<std::string>{" aa", "a", "b"});

    auto none = train_bpe(corpus, {minimum_vocab_size(corpus, 2), 1, {"en", "de"}});
    CHECK(none.merges().empty());
    CHECK(none.vocab().size() == 5 + 2 + 3);

    auto again = train_bpe(corpus, {minimum + 2, 1, {}});
    CHECK(again.merges() == two.merges());

    CHECK_THROWS_AS(train_bpe({"", "   "}, {100, 1, {}}), ConfigError);
    CHECK_THROWS_AS(train_bpe(corpus, {minimum - 1, 1, {}}), ConfigError);
}

TEST_CASE("encode/decode round trip on seven languages") {
    auto tok = train_bpe(kSevenLanguages, {400, 2, {"en", "de", "fr", "cs", "lv", "hi", "tr"}});
    CHECK(tok.encode("").empty());
    CHECK(tok.decode({}).empty());
    for (const auto& line : kSevenLanguages) {
        const auto ids = tok.encode(line);
        CHECK(std::find(ids.begin(), ids.end(), kUnk) == ids.end());
        CHECK(tok.decode(ids) == line);
    }
    CHECK(tok.decode(tok.encode("  Ein   Mann\tmit  ")) == "Ein Mann mit");

    // bytes never seen in training become UNK
    const auto ids = tok.encode("Q");
    CHECK(std::find(ids.begin(), ids.end(), kUnk) != ids.end());

    auto dir = temp_dir("bpe");
    tok.save(dir / "spm");
    auto loaded = BpeTokenizer::load(dir / "spm");
    CHECK(loaded.merges() == tok.merges());
    for (const auto& line : kSevenLanguages) CHECK(loaded.encode(line) == tok.encode(line));
}

TEST_CASE("prefix_target_token") {
    Vocabulary v({"en", "de", "fr", "cs", "lv", "hi", "tr"});
    const std::vector<TokenId> src{kBos, 17, kEos};
    const auto de = prefix_target_token(src, "de", v);
    CHECK(de == std::vector<TokenId>{v.tag_id("de"), kBos, 17, kEos});
    CHECK(src == std::vector<TokenId>{kBos, 17, kEos});
    CHECK_THROWS_AS(prefix_target_token(de, "fr", v), LanguageError);
    CHECK_THROWS_AS(prefix_target_token(src, "xx", v), LanguageError);
    CHECK(prefix_target_token({17, 18}, "fr", v) ==
          std::vector<TokenId>{v.tag_id("fr"), kBos, 17, 18, kEos});

    const std::vector<std::string> targets{"de", "fr", "cs", "lv", "hi", "tr"};
    for (const auto& a : targets) {
        for (const auto& b : targets) {
            const auto pa = prefix_target_token(src, a, v);
            const auto pb = prefix_target_token(src, b, v);
            CHECK(std::equal(pa.begin() + 1, pa.end(), pb.begin() + 1));
            CHECK((pa[0] == pb[0]) == (a == b));
        }
    }
}

TEST_CASE("make_batches") {
    std::vector<ParallelExample> three{example_with_lengths(5, 5, 0), example_with_lengths(5, 5, 1),
                                       example_with_lengths(5, 5, 2)};
    auto one = make_batches(three, 15);
    REQUIRE(one.size() == 1);
    CHECK(one[0].size() == 3);

    CHECK_THROWS_AS(make_batches(three, 4), ConfigError);

    // Long cap: 4096 / 10 = 409 examples of length 10 per batch.
    std::vector<ParallelExample> many;
    for (std::size_t i = 0; i < 1000; ++i) many.push_back(example_with_lengths(10, 10, i));
    auto packed = make_batches(many, 4096);
    REQUIRE(packed.size() == 3);
    CHECK(packed[0].size() == 409);
    CHECK(packed[1].size() == 409);
    CHECK(packed[2].size() == 182);
}

TEST_CASE("make_batches matches an exhaustive packer on small cases") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        std::vector<ParallelExample> examples;
        for (std::size_t i = 0; i < n; ++i) {
            examples.push_back(example_with_lengths(1 + rng.below(10), 1 + rng.below(10), i));
        }
        const std::size_t cap = 10 + rng.below(30);
        auto batches = make_batches(examples, cap);

        std::multiset<std::string> seen;
        std::vector<std::size_t> order;
        for (const auto& b : batches) {
            CHECK(padded_tokens(examples, b) <= cap);
            for (std::size_t i : b) {
                seen.insert(examples[i].example_id);
                order.push_back(i);
            }
        }
        std::multiset<std::string> expected;
        for (const auto& e : examples) expected.insert(e.example_id);
        CHECK(seen == expected);
        CHECK(batches.size() == brute_force_min_batches(examples, order, cap));
    }
}

TEST_CASE("epoch order is a seeded permutation") {
    auto a = epoch_order(10, 7, 3);
    auto b = epoch_order(10, 7, 3);
    CHECK(a == b);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(epoch_order(10, 7, 4) != a);
}

TEST_CASE("mask_source") {
    Vocabulary v({"en", "de"});
    for (int i = 0; i < 20; ++i) v.add("t" + std::to_string(i));
    const TokenId base = v.first_ordinary();
    std::vector<TokenId> ids{v.tag_id("de"), kBos};
    for (TokenId i = 0; i < 10; ++i) ids.push_back(base + i);
    ids.push_back(kEos);
    ids.push_back(kPad);

    CHECK(mask_source(ids, 0.0, 1, v) == ids);

    auto all = mask_source(ids, 1.0, 1, v);
    CHECK(all.size() == ids.size());
    CHECK(all[0] == ids[0]);
    CHECK(all[1] == kBos);
    for (std::size_t i = 2; i < 12; ++i) CHECK(all[i] == kMask);
    CHECK(all[12] == kEos);
    CHECK(all[13] == kPad);

    auto half = mask_source(ids, 0.5, 42, v);
    CHECK(std::count(half.begin(), half.end(), kMask) == 5);
    CHECK(mask_source(ids, 0.5, 42, v) == half);
    CHECK(mask_source(ids, 0.5, 43, v) != half);

    // 0.25 * 10 = 2.5 rounds half up
    auto quarter = mask_source(ids, 0.25, 9, v);
    CHECK(std::count(quarter.begin(), quarter.end(), kMask) == 3);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const double ratio = static_cast<double>(seed % 11) / 10.0;
        auto masked = mask_source(ids, ratio, seed, v);
        REQUIRE(masked.size() == ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (v.is_special(ids[i])) CHECK(masked[i] == ids[i]);
        }
    }
    CHECK_THROWS_AS(mask_source(ids, 1.5, 1, v), ConfigError);
}

TEST_CASE("manifest loading and alignment validation") {
    auto dir = temp_dir("manifest");
    write_lines(dir / "train.en", {"a dog runs", "a cat sleeps"});
    write_lines(dir / "train.de", {"ein hund rennt", "eine katze schlaeft"});
    write_lines(dir / "train.fr", {"un chien court"});
    {
        std::ofstream m(dir / "ok.json");
        m << R"({"split": "train", "languages": ["en", "de"],
                 "text_paths": {"en": "train.en", "de": "train.de"}, "vtok_path": "img.vtok"})";
    }
    {
        std::ofstream m(dir / "bad.json");
        m << R"({"split": "train", "languages": ["en", "de", "fr"],
                 "text_paths": {"en": "train.en", "de": "train.de", "fr": "train.fr"}})";
    }
    auto manifest = CorpusManifest::load(dir / "ok.json");
    CHECK(manifest.vtok_path == dir / "img.vtok");
    CHECK(manifest.target_languages() == std::vector<std::string>{"de"});
    auto corpus = load_corpus(manifest);
    CHECK(corpus.size() == 2);
    CHECK(corpus.image_ids == std::vector<std::string>{"0", "1"});

    try {
        load_corpus(CorpusManifest::load(dir / "bad.json"));
        FAIL("misaligned corpus accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("train.fr") != std::string::npos);
    }
    CHECK_THROWS_AS(CorpusManifest::load(dir / "missing.json"), FormatError);

    auto tok2 = train_bpe({"a dog runs", "a cat sleeps", "ein hund rennt", "eine katze schlaeft"},
                          {80, 1, {"en", "de"}});
    auto examples = build_examples(corpus, tok2);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].source_ids[0] == tok2.vocab().tag_id("de"));
    CHECK(examples[0].source_ids[1] == kBos);
    CHECK(examples[0].source_ids.back() == kEos);
    CHECK(examples[0].target_ids.back() == kEos);
    CHECK(tok2.decode(examples[1].target_ids) == "eine katze schlaeft");
    CHECK(examples[1].image_id == "1");
}

TEST_CASE("parse_direction") {
    CHECK(parse_direction("en-de") == std::pair<std::string, std::string>{"en", "de"});
    CHECK_THROWS_AS(parse_direction("ende"), LanguageError);
}
