#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lvpm3/vocabulary.hpp"

namespace lvpm3::text {

using MergePair = std::pair<std::string, std::string>;

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// Byte-level BPE tokenizer. Every word is encoded with a leading space byte so that
/// merge reversal restores word boundaries.
class BpeTokenizer {
  public:
    BpeTokenizer() = default;
    BpeTokenizer(Vocabulary vocab, std::vector<MergePair> merges);

    const Vocabulary& vocab() const { return vocab_; }
    const std::vector<MergePair>& merges() const { return merges_; }

    /// Content ids only (no BOS/EOS). Bytes missing from the vocabulary map to UNK.
    std::vector<TokenId> encode(std::string_view text) const;
    /// Drops PAD/BOS/EOS and language tags; UNK and MASK render as <unk>/<mask>.
    std::string decode(const std::vector<TokenId>& ids) const;

    /// Symbol sequences for each word after merge application (exposed for tests).
    std::vector<std::vector<std::string>> segment(std::string_view text) const;

    void save(const std::filesystem::path& prefix) const;
    static BpeTokenizer load(const std::filesystem::path& prefix);

    std::string serialize_merges() const;
    static std::vector<MergePair> deserialize_merges(std::string_view text);

  private:
    std::vector<std::string> apply_merges(std::string_view word) const;

    Vocabulary vocab_;
    std::vector<MergePair> merges_;
    std::map<MergePair, std::size_t> rank_;
};

struct BpeTrainOptions {
    std::size_t vocab_size = 0;
    std::size_t min_freq = 2;
    std::vector<std::string> languages;
};

/// Joint BPE over all given lines. Ties between equally frequent pairs go to the
/// lexicographically smallest pair (byte order). Stops at vocab_size or when the best
/// pair falls below min_freq.
BpeTokenizer train_bpe(const std::vector<std::string>& lines, const BpeTrainOptions& options);

/// Smallest admissible vocab_size for the given corpus and languages.
std::size_t minimum_vocab_size(const std::vector<std::string>& lines, std::size_t num_languages);

} // namespace lvpm3::text
