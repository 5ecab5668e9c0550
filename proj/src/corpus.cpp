#include "lvpm3/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"

namespace lvpm3::text {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open corpus manifest " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    const auto base = path.parent_path();
    CorpusManifest m;
    try {
        m.split = j.at("split").get<std::string>();
        m.languages = j.at("languages").get<std::vector<std::string>>();
        for (const auto& [lang, p] : j.at("text_paths").items()) {
            m.text_paths[lang] = resolve(base, p.get<std::string>());
        }
        if (j.contains("vtok_path") && !j["vtok_path"].is_null()) {
            m.vtok_path = resolve(base, j["vtok_path"].get<std::string>());
        }
        if (j.contains("image_ids_path")) {
            m.image_ids_path = resolve(base, j["image_ids_path"].get<std::string>());
        }
        m.source_lang = j.value("source_lang", std::string("en"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    for (const auto& lang : m.languages) {
        if (!m.text_paths.count(lang)) {
            throw FormatError("manifest " + path.string() + " has no text path for '" + lang + "'");
        }
    }
    if (std::find(m.languages.begin(), m.languages.end(), m.source_lang) == m.languages.end()) {
        throw FormatError("manifest source language '" + m.source_lang + "' is not listed");
    }
    return m;
}

void CorpusManifest::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["split"] = split;
    j["languages"] = languages;
    j["source_lang"] = source_lang;
    nlohmann::json paths = nlohmann::json::object();
    for (const auto& [lang, p] : text_paths) paths[lang] = p.string();
    j["text_paths"] = paths;
    if (!vtok_path.empty()) j["vtok_path"] = vtok_path.string();
    if (!image_ids_path.empty()) j["image_ids_path"] = image_ids_path.string();
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write manifest " + path.string());
    }
    out << j.dump(2) << '\n';
}

std::vector<std::string> CorpusManifest::target_languages() const {
    std::vector<std::string> out;
    for (const auto& lang : languages) {
        if (lang != source_lang) out.push_back(lang);
    }
    return out;
}

ParallelCorpus load_corpus(const CorpusManifest& manifest) {
    ParallelCorpus corpus;
    corpus.manifest = manifest;
    std::size_t expected = 0;
    std::string first_lang;
    for (const auto& lang : manifest.languages) {
        auto raw = read_lines(manifest.text_paths.at(lang));
        if (first_lang.empty()) {
            first_lang = lang;
            expected = raw.size();
        } else if (raw.size() != expected) {
            throw FormatError("misaligned corpus: " + manifest.text_paths.at(lang).string() +
                              " has " + std::to_string(raw.size()) + " lines but " +
                              manifest.text_paths.at(first_lang).string() + " has " +
                              std::to_string(expected));
        }
        auto& out = corpus.lines[lang];
        out.reserve(raw.size());
        for (const auto& line : raw) out.push_back(normalize_whitespace(line));
    }
    if (!manifest.image_ids_path.empty()) {
        corpus.image_ids = read_lines(manifest.image_ids_path);
        if (corpus.image_ids.size() != expected) {
            throw FormatError("misaligned corpus: image id file " +
                              manifest.image_ids_path.string() + " has " +
                              std::to_string(corpus.image_ids.size()) + " lines, expected " +
                              std::to_string(expected));
        }
    } else {
        for (std::size_t i = 0; i < expected; ++i) corpus.image_ids.push_back(std::to_string(i));
    }
    return corpus;
}

std::vector<TokenId> prefix_target_token(const std::vector<TokenId>& source_ids,
                                         std::string_view target_lang, const Vocabulary& vocab) {
    const TokenId tag = vocab.tag_id(target_lang);
    for (TokenId id : source_ids) {
        if (vocab.is_tag(id)) {
            throw LanguageError("source already carries language tag " + vocab.token(id));
        }
    }
    std::vector<TokenId> out{tag};
    const bool framed = !source_ids.empty() && source_ids.front() == kBos;
    if (!framed) out.push_back(kBos);
    out.insert(out.end(), source_ids.begin(), source_ids.end());
    if (out.back() != kEos) out.push_back(kEos);
    return out;
}

std::vector<ParallelExample> build_examples(const ParallelCorpus& corpus,
                                            const BpeTokenizer& tokenizer,
                                            std::vector<std::string> targets) {
    const auto& m = corpus.manifest;
    if (targets.empty()) targets = m.target_languages();
    for (const auto& t : targets) {
        if (!corpus.lines.count(t)) {
            throw LanguageError("target language '" + t + "' is not in the corpus");
        }
        tokenizer.vocab().tag_id(t);
    }
    const auto& sources = corpus.lines.at(m.source_lang);
    std::vector<ParallelExample> out;
    out.reserve(corpus.size() * targets.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto content = tokenizer.encode(sources[i]);
        for (const auto& t : targets) {
            ParallelExample ex;
            ex.example_id = m.split + "-" + std::to_string(i) + "-" + m.source_lang + "-" + t;
            ex.source_lang = m.source_lang;
            ex.target_lang = t;
            ex.source_ids = prefix_target_token(content, t, tokenizer.vocab());
            ex.target_ids = tokenizer.encode(corpus.lines.at(t)[i]);
            ex.target_ids.push_back(kEos);
            ex.image_id = corpus.image_ids[i];
            ex.line = i;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<TokenId> mask_source(const std::vector<TokenId>& ids, double ratio, std::uint64_t seed,
                                 const Vocabulary& vocab) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw ConfigError("masking ratio must lie in [0, 1], got " + std::to_string(ratio));
    }
    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!vocab.is_special(ids[i])) maskable.push_back(i);
    }
    const auto count = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(maskable.size()) + 0.5));
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(maskable[i], maskable[i + rng.below(maskable.size() - i)]);
    }
    std::vector<TokenId> out = ids;
    for (std::size_t i = 0; i < count; ++i) out[maskable[i]] = kMask;
    return out;
}

std::pair<std::string, std::string> parse_direction(std::string_view direction) {
    const auto dash = direction.find('-');
    if (dash == std::string_view::npos || dash == 0 || dash + 1 >= direction.size()) {
        throw LanguageError("direction must look like 'en-de', got '" + std::string(direction) + "'");
    }
    return {std::string(direction.substr(0, dash)), std::string(direction.substr(dash + 1))};
}

} // namespace lvpm3::text
