#include "lvpm3/vocabulary.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "lvpm3/error.hpp"

namespace lvpm3::text {

namespace {

constexpr std::array<std::string_view, kNumReserved> kReservedText{"<pad>", "<s>", "</s>", "<unk>",
                                                                   "<mask>"};

bool needs_escape(unsigned char c) { return c <= 0x20 || c == 0x7f || c == '\\' || c == '<' || c >= 0x80; }

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

std::string escape_token(std::string_view raw) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : raw) {
        if (needs_escape(c)) {
            out += "\\x";
            out += kHex[c >> 4];
            out += kHex[c & 0xf];
        } else {
            out += static_cast<char>(c);
        }
    }
    return out;
}

std::string unescape_token(std::string_view escaped) {
    std::string out;
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        if (escaped[i] == '\\') {
            if (i + 3 >= escaped.size() || escaped[i + 1] != 'x' || hex_value(escaped[i + 2]) < 0 ||
                hex_value(escaped[i + 3]) < 0) {
                throw FormatError("bad escape sequence in token '" + std::string(escaped) + "'");
            }
            out += static_cast<char>(hex_value(escaped[i + 2]) * 16 + hex_value(escaped[i + 3]));
            i += 3;
        } else {
            out += escaped[i];
        }
    }
    return out;
}

Vocabulary::Vocabulary(std::vector<std::string> languages) : languages_(std::move(languages)) {
    for (auto text : kReservedText) {
        tokens_.emplace_back(text);
    }
    for (std::size_t i = 0; i < languages_.size(); ++i) {
        const auto& lang = languages_[i];
        if (lang.empty() || lang.find_first_of(" \t\n<>") != std::string::npos) {
            throw LanguageError("invalid language code '" + lang + "'");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (languages_[j] == lang) {
                throw LanguageError("language '" + lang + "' listed twice");
            }
        }
        tokens_.push_back(tag_text(lang));
    }
}

std::string Vocabulary::tag_text(std::string_view language) { return "<2" + std::string(language) + ">"; }

TokenId Vocabulary::add(std::string token) {
    if (token.empty()) {
        throw VocabularyError("cannot add an empty token");
    }
    if (ordinary_.count(token)) {
        throw VocabularyError("duplicate token '" + escape_token(token) + "'");
    }
    const auto id = static_cast<TokenId>(tokens_.size());
    ordinary_.emplace(token, id);
    tokens_.push_back(std::move(token));
    return id;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw VocabularyError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = ordinary_.find(std::string(token));
    if (it == ordinary_.end()) {
        return std::nullopt;
    }
    return it->second;
}

TokenId Vocabulary::tag_id(std::string_view language) const {
    for (std::size_t i = 0; i < languages_.size(); ++i) {
        if (languages_[i] == language) {
            return kNumReserved + static_cast<TokenId>(i);
        }
    }
    throw LanguageError("no tag token for language '" + std::string(language) + "'");
}

std::optional<std::string> Vocabulary::language_of(TokenId id) const {
    if (!is_tag(id)) {
        return std::nullopt;
    }
    return languages_[static_cast<std::size_t>(id - kNumReserved)];
}

bool Vocabulary::is_tag(TokenId id) const { return id >= kNumReserved && id < first_ordinary(); }

std::string Vocabulary::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out += is_special(static_cast<TokenId>(i)) ? tokens_[i] : escape_token(tokens_[i]);
        out += '\n';
    }
    return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    if (lines.size() < static_cast<std::size_t>(kNumReserved)) {
        throw FormatError("vocabulary has fewer lines than the reserved tokens");
    }
    for (std::size_t i = 0; i < kReservedText.size(); ++i) {
        if (lines[i] != kReservedText[i]) {
            throw FormatError("vocabulary line " + std::to_string(i + 1) + " should be " +
                              std::string(kReservedText[i]));
        }
    }
    std::vector<std::string> languages;
    std::size_t i = kReservedText.size();
    for (; i < lines.size() && lines[i].size() > 3 && lines[i].rfind("<2", 0) == 0 &&
           lines[i].back() == '>';
         ++i) {
        languages.push_back(lines[i].substr(2, lines[i].size() - 3));
    }
    Vocabulary vocab(std::move(languages));
    for (; i < lines.size(); ++i) {
        if (!lines[i].empty() && lines[i][0] == '<') {
            throw FormatError("special token '" + lines[i] + "' after ordinary tokens at line " +
                              std::to_string(i + 1));
        }
        vocab.add(unescape_token(lines[i]));
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write vocabulary file " + path.string());
    }
    out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open vocabulary file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return deserialize(buffer.str());
}

} // namespace lvpm3::text
