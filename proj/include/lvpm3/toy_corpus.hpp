#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lvpm3/corpus.hpp"

namespace lvpm3::toy {

/// Synthetic multilingual corpus: random English-like sentences, each target language a
/// deterministic word substitution plus a language-specific word order, so the correct
/// output depends on the requested target language.
struct ToyCorpusOptions {
    std::size_t num_pairs = 32;
    std::string source_lang = "en";
    std::vector<std::string> target_langs{"de", "fr", "cs"};
    std::size_t min_words = 3;
    std::size_t max_words = 5;
    std::uint64_t seed = 1;
};

struct ToyCorpus {
    std::string source_lang;
    std::map<std::string, std::vector<std::string>> lines;
    std::vector<std::string> image_ids;
};

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options);

/// Target-language rendering of one source sentence.
std::string toy_translate(const std::string& sentence, const std::string& lang);

/// Writes `<lang>.txt`, `images.txt`, `features.vtok` (pseudo visual tokens) and
/// `manifest.json` into `dir`; returns the manifest.
text::CorpusManifest write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir,
                                      const std::string& split, std::size_t num_visual, std::size_t visual_width,
                                      std::uint64_t visual_seed);

} // namespace lvpm3::toy
