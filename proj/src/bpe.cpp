#include "lvpm3/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "lvpm3/error.hpp"

namespace lvpm3::text {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) words.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

/// Merges every non-overlapping occurrence of (left, right), scanning left to right.
void merge_pair(std::vector<std::string>& symbols, const MergePair& pair) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
            out.push_back(symbols[i] + symbols[i + 1]);
            ++i;
        } else {
            out.push_back(std::move(symbols[i]));
        }
    }
    symbols = std::move(out);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::set<unsigned char> byte_alphabet(const std::vector<std::string>& lines) {
    std::set<unsigned char> bytes;
    bool any_word = false;
    for (const auto& line : lines) {
        for (const auto& word : split_words(line)) {
            any_word = true;
            for (unsigned char c : word) bytes.insert(c);
        }
    }
    if (any_word) bytes.insert(' ');
    return bytes;
}

} // namespace

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    for (const auto& w : split_words(text)) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

BpeTokenizer::BpeTokenizer(Vocabulary vocab, std::vector<MergePair> merges)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
    for (std::size_t i = 0; i < merges_.size(); ++i) {
        rank_.emplace(merges_[i], i);
    }
}

std::vector<std::string> BpeTokenizer::apply_merges(std::string_view word) const {
    std::vector<std::string> symbols;
    symbols.reserve(word.size() + 1);
    symbols.emplace_back(" ");
    for (char c : word) symbols.emplace_back(1, c);
    while (symbols.size() > 1) {
        std::size_t best = rank_.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = rank_.find({symbols[i], symbols[i + 1]});
            if (it != rank_.end()) best = std::min(best, it->second);
        }
        if (best == rank_.size()) break;
        merge_pair(symbols, merges_[best]);
    }
    return symbols;
}

std::vector<std::vector<std::string>> BpeTokenizer::segment(std::string_view text) const {
    std::vector<std::vector<std::string>> out;
    for (const auto& word : split_words(text)) out.push_back(apply_merges(word));
    return out;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& word : split_words(text)) {
        for (const auto& symbol : apply_merges(word)) {
            ids.push_back(vocab_.find(symbol).value_or(kUnk));
        }
    }
    return ids;
}

std::string BpeTokenizer::decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id == kUnk) {
            out += "<unk>";
        } else if (id == kMask) {
            out += "<mask>";
        } else if (!vocab_.is_special(id)) {
            out += vocab_.token(id);
        }
    }
    if (!out.empty() && out.front() == ' ') out.erase(0, 1);
    return out;
}

std::string BpeTokenizer::serialize_merges() const {
    std::string out;
    for (const auto& [left, right] : merges_) {
        out += escape_token(left) + ' ' + escape_token(right) + '\n';
    }
    return out;
}

std::vector<MergePair> BpeTokenizer::deserialize_merges(std::string_view text) {
    std::vector<MergePair> merges;
    std::size_t start = 0, line_no = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        ++line_no;
        const std::size_t space = line.find(' ');
        if (space == std::string_view::npos || space == 0 || space + 1 >= line.size() ||
            line.find(' ', space + 1) != std::string_view::npos) {
            throw FormatError("merge line " + std::to_string(line_no) + " is not '<left> <right>'");
        }
        merges.emplace_back(unescape_token(line.substr(0, space)),
                            unescape_token(line.substr(space + 1)));
        start = end + 1;
    }
    return merges;
}

void BpeTokenizer::save(const std::filesystem::path& prefix) const {
    vocab_.save(prefix.string() + ".vocab");
    std::ofstream out(prefix.string() + ".merges", std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + prefix.string() + ".merges");
    }
    out << serialize_merges();
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& prefix) {
    auto vocab = Vocabulary::load(prefix.string() + ".vocab");
    auto merges = deserialize_merges(read_file(prefix.string() + ".merges"));
    for (const auto& [l, r] : merges) {
        if (!vocab.find(l + r)) {
            throw FormatError("merge result '" + escape_token(l + r) + "' missing from vocabulary");
        }
    }
    return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::size_t minimum_vocab_size(const std::vector<std::string>& lines, std::size_t num_languages) {
    return static_cast<std::size_t>(kNumReserved) + num_languages + byte_alphabet(lines).size();
}

BpeTokenizer train_bpe(const std::vector<std::string>& lines, const BpeTrainOptions& options) {
    std::map<std::string, std::size_t> word_counts;
    for (const auto& line : lines) {
        for (auto& w : split_words(line)) ++word_counts[w];
    }
    if (word_counts.empty()) {
        throw ConfigError("cannot train BPE on an empty corpus");
    }
    const std::size_t minimum = minimum_vocab_size(lines, options.languages.size());
    if (options.vocab_size < minimum) {
        throw ConfigError("vocab_size " + std::to_string(options.vocab_size) +
                          " is below the minimum " + std::to_string(minimum) +
                          " (reserved + language tags + byte alphabet)");
    }

    Vocabulary vocab(options.languages);
    for (unsigned char c : byte_alphabet(lines)) {
        vocab.add(std::string(1, static_cast<char>(c)));
    }

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    for (const auto& [w, count] : word_counts) {
        std::vector<std::string> symbols{" "};
        for (char c : w) symbols.emplace_back(1, c);
        words.emplace_back(std::move(symbols), count);
    }

    std::vector<MergePair> merges;
    const std::size_t min_freq = std::max<std::size_t>(options.min_freq, 1);
    while (vocab.size() < options.vocab_size) {
        std::map<MergePair, std::size_t> pair_counts;
        for (const auto& [symbols, count] : words) {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                pair_counts[{symbols[i], symbols[i + 1]}] += count;
            }
        }
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        const MergePair* best = nullptr;
        std::size_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = &pair;
                best_count = count;
            }
        }
        if (best == nullptr || best_count < min_freq) break;
        const MergePair chosen = *best;
        merges.push_back(chosen);
        const std::string joined = chosen.first + chosen.second;
        if (!vocab.find(joined)) vocab.add(joined);
        for (auto& entry : words) merge_pair(entry.first, chosen);
    }
    return BpeTokenizer(std::move(vocab), std::move(merges));
}

} // namespace lvpm3::text
