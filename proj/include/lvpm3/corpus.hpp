#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lvpm3/bpe.hpp"
#include "lvpm3/vocabulary.hpp"

namespace lvpm3::text {

/// JSON file: {"split", "languages": [...], "text_paths": {lang: path}, "vtok_path",
/// optional "source_lang" (default "en") and "image_ids_path"}. Relative paths resolve
/// against the manifest's directory.
struct CorpusManifest {
    std::string split;
    std::vector<std::string> languages;
    std::map<std::string, std::filesystem::path> text_paths;
    std::filesystem::path vtok_path;      // empty when absent
    std::filesystem::path image_ids_path; // empty: image id = line index
    std::string source_lang = "en";

    static CorpusManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::vector<std::string> target_languages() const;
};

/// Line-aligned text of every language plus the image id of each line.
struct ParallelCorpus {
    CorpusManifest manifest;
    std::map<std::string, std::vector<std::string>> lines; // whitespace-normalized
    std::vector<std::string> image_ids;

    std::size_t size() const { return image_ids.size(); }
};

/// Loads every text file and rejects misaligned line counts.
ParallelCorpus load_corpus(const CorpusManifest& manifest);

struct ParallelExample {
    std::string example_id;
    std::string source_lang;
    std::string target_lang;
    std::vector<TokenId> source_ids; // [tag, BOS, ..., EOS]
    std::vector<TokenId> target_ids; // [..., EOS]
    std::string image_id;
    std::size_t line = 0;
};

/// [tag(target), BOS, ..., EOS]. Accepts either bare content ids or a BOS...EOS frame;
/// rejects input that already carries a language tag.
std::vector<TokenId> prefix_target_token(const std::vector<TokenId>& source_ids,
                                         std::string_view target_lang, const Vocabulary& vocab);

/// One example per (line, target language), lines outermost. `targets` empty means every
/// non-source language in the manifest.
std::vector<ParallelExample> build_examples(const ParallelCorpus& corpus,
                                            const BpeTokenizer& tokenizer,
                                            std::vector<std::string> targets = {});

/// Replaces round(ratio * n) ordinary tokens with MASK (round half up). Reserved ids and
/// language tags are never touched. Positions are drawn without replacement from `seed`.
std::vector<TokenId> mask_source(const std::vector<TokenId>& ids, double ratio, std::uint64_t seed,
                                 const Vocabulary& vocab);

/// Parses "en-de" style directions.
std::pair<std::string, std::string> parse_direction(std::string_view direction);

} // namespace lvpm3::text
