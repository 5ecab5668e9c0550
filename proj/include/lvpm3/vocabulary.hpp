#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lvpm3::text {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kNumReserved = 5;

/// Shared multilingual vocabulary. Ids 0..4 are reserved, followed by one tag token per
/// language (prefixed to sources to select the translation direction), followed by
/// ordinary subword tokens stored as raw byte strings.
class Vocabulary {
  public:
    Vocabulary() = default;
    /// Reserved tokens plus one tag per language, in the given order.
    explicit Vocabulary(std::vector<std::string> languages);

    /// Appends an ordinary token and returns its id; throws on duplicates.
    TokenId add(std::string token);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(std::string_view token) const;

    const std::vector<std::string>& languages() const { return languages_; }
    TokenId tag_id(std::string_view language) const;
    std::optional<std::string> language_of(TokenId id) const;
    bool is_tag(TokenId id) const;
    /// Reserved ids and language tags.
    bool is_special(TokenId id) const { return id >= 0 && id < first_ordinary(); }
    TokenId first_ordinary() const {
        return kNumReserved + static_cast<TokenId>(languages_.size());
    }

    static std::string tag_text(std::string_view language);

    /// One token per line; line number is the id. Ordinary tokens are escaped.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    std::string serialize() const;
    static Vocabulary deserialize(std::string_view text);

  private:
    std::vector<std::string> tokens_;
    std::vector<std::string> languages_;
    std::unordered_map<std::string, TokenId> ordinary_;
};

/// Byte escaping used by the vocabulary and merge files.
std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

} // namespace lvpm3::text
