#include "lvpm3/toy_corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::toy {

namespace {

const std::vector<std::string>& source_words() {
    static const std::vector<std::string> words{
        "a",     "man",   "woman", "dog",   "cat",  "child", "red",  "blue",
        "ball",  "runs",  "sits",  "on",    "the",  "grass", "road", "with",
        "hat",   "plays", "near",  "water", "big",  "small", "girl", "boy",
    };
    return words;
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string pseudo_word(const std::string& word, const std::string& lang) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    std::uint64_t h = mix64(hash_string(lang), hash_string(word));
    const std::size_t syllables = 1 + h % 3;
    std::string out;
    for (std::size_t i = 0; i < syllables; ++i) {
        h = mix64(h);
        out += consonants[h % 14];
        out += vowels[(h >> 8) % 5];
    }
    out += consonants[(h >> 16) % 14];
    return out;
}

} // namespace

std::string toy_translate(const std::string& sentence, const std::string& lang) {
    auto words = split_words(sentence);
    for (auto& w : words) w = pseudo_word(w, lang);
    // language-specific word order
    switch (hash_string(lang) % 3) {
    case 0:
        break;
    case 1:
        std::reverse(words.begin(), words.end());
        break;
    default:
        for (std::size_t i = 0; i + 1 < words.size(); i += 2) std::swap(words[i], words[i + 1]);
        break;
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
    return out;
}

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options) {
    if (options.min_words == 0 || options.max_words < options.min_words) {
        throw ConfigError("toy corpus needs 1 <= min_words <= max_words");
    }
    if (std::find(options.target_langs.begin(), options.target_langs.end(), options.source_lang) !=
        options.target_langs.end()) {
        throw ConfigError("toy corpus target languages must not include the source language");
    }
    Rng rng(options.seed);
    const auto& pool = source_words();
    ToyCorpus corpus;
    corpus.source_lang = options.source_lang;
    std::set<std::string> seen;
    std::size_t attempts = 0;
    while (corpus.image_ids.size() < options.num_pairs) {
        if (++attempts > 1000 * (options.num_pairs + 1)) {
            throw ConfigError("cannot generate " + std::to_string(options.num_pairs) + " distinct toy sentences");
        }
        const std::size_t len = options.min_words + rng.below(options.max_words - options.min_words + 1);
        std::string sentence;
        for (std::size_t i = 0; i < len; ++i) sentence += (i ? " " : "") + pool[rng.below(pool.size())];
        if (!seen.insert(sentence).second) continue;
        const std::size_t index = corpus.image_ids.size();
        corpus.lines[options.source_lang].push_back(sentence);
        for (const auto& lang : options.target_langs) corpus.lines[lang].push_back(toy_translate(sentence, lang));
        corpus.image_ids.push_back("img" + std::to_string(100000 + index) + ".jpg");
    }
    return corpus;
}

text::CorpusManifest write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir,
                                      const std::string& split, std::size_t num_visual, std::size_t visual_width,
                                      std::uint64_t visual_seed) {
    std::filesystem::create_directories(dir);
    text::CorpusManifest manifest;
    manifest.split = split;
    auto write_lines = [&](const std::filesystem::path& path, const std::vector<std::string>& lines) {
        std::ofstream out(path);
        if (!out) throw FormatError("cannot write " + path.string());
        for (const auto& l : lines) out << l << '\n';
    };
    for (const auto& [lang, lines] : corpus.lines) {
        manifest.languages.push_back(lang);
        manifest.text_paths[lang] = lang + ".txt";
        write_lines(dir / (lang + ".txt"), lines);
    }
    manifest.source_lang = corpus.source_lang;
    write_lines(dir / "images.txt", corpus.image_ids);
    manifest.image_ids_path = "images.txt";

    std::vector<vision::VisualTokens> records;
    for (const auto& id : corpus.image_ids) {
        records.push_back(vision::pseudo_visual_tokens(id, num_visual, visual_width, visual_seed));
    }
    vision::write_vtok(records, dir / "features.vtok");
    manifest.vtok_path = "features.vtok";
    manifest.save(dir / "manifest.json");
    return text::CorpusManifest::load(dir / "manifest.json");
}

} // namespace lvpm3::toy
