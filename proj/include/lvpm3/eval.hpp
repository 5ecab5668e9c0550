#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lvpm3/bpe.hpp"
#include "lvpm3/corpus.hpp"
#include "lvpm3/model.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::eval {

using text::TokenId;

/// Next-token logits for a set of equally long prefixes (each starting with BOS).
using StepScorer = std::function<std::vector<std::vector<double>>(const std::vector<std::vector<TokenId>>& prefixes)>;

struct Hypothesis {
    std::vector<TokenId> tokens; // BOS ... EOS
    double logprob = 0.0;
    double score = 0.0;          // logprob / length^alpha, length counts EOS but not BOS
    bool forced = false;         // EOS was imposed by max_len

    /// Generated tokens without BOS/EOS.
    std::vector<TokenId> content() const;
};

struct BeamOptions {
    std::size_t beam = 5;
    double alpha = 1.0;
    std::size_t max_len = 0; // generated tokens including EOS; 0 = 2 * source length + 8
};

/// logprob / len^alpha.
double length_normalized(double logprob, std::size_t length, double alpha);

/// Log-softmax in double precision.
std::vector<double> log_softmax(const std::vector<double>& logits);

/// Length-normalized beam search. Each step scores every live hypothesis, ranks all
/// extensions by cumulative log-probability (ties: lower token id, then earlier parent),
/// keeps the best `beam`, and retires those ending in EOS. PAD and BOS are never
/// generated; at step max_len only EOS is allowed. Stops when no hypothesis is live or
/// `beam` hypotheses have finished; returns the finished one with the best score
/// (ties: the one that finished earlier, then lexicographically smaller tokens).
Hypothesis beam_search(const StepScorer& scorer, std::size_t max_len, std::size_t beam, double alpha);

/// Brute-force reference: every sequence of up to max_len - 1 tokens followed by EOS.
Hypothesis exhaustive_search(const StepScorer& scorer, std::size_t vocab_size, std::size_t max_len, double alpha);

/// Scorer backed by the model for one tag-prefixed source sentence.
StepScorer model_scorer(const model::Model& model, const std::vector<TokenId>& source_ids,
                        const vision::VisualTokens* visual);

/// Translates one source sentence ([tag, BOS, ..., EOS]).
Hypothesis translate(const model::Model& model, const std::vector<TokenId>& source_ids,
                     const vision::VisualTokens* visual, const BeamOptions& options);

// ---- BLEU ----

struct BleuStats {
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;

    BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);
/// 100 * BP * exp(mean log p_n); 0 when any precision is zero.
double bleu_from_stats(const BleuStats& stats);

/// Corpus-level cumulative 4-gram BLEU over pre-tokenized sentences.
double bleu4(const std::vector<std::vector<std::string>>& hypotheses,
             const std::vector<std::vector<std::string>>& references);
/// Same on raw strings, split on whitespace.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   bool lowercase = false);

// ---- corpus evaluation ----

struct SentenceResult {
    std::string example_id;
    std::string source;
    std::string hypothesis;
    std::string reference;
};

struct EvalReport {
    std::string direction;
    double bleu = 0.0;
    std::optional<double> ratio;
    std::optional<std::uint64_t> seed;
    std::vector<SentenceResult> sentences;
};

struct EvalOptions {
    BeamOptions beam;
    bool lowercase = false;
    /// Source masking for the sweep: ratio and seed (per-sentence seeds derive from it).
    std::optional<double> mask_ratio;
    std::uint64_t mask_seed = 0;
};

/// Decodes every line of the corpus for `direction` ("en-de") and scores corpus BLEU.
EvalReport evaluate(const model::Model& model, const text::BpeTokenizer& tokenizer,
                    const text::ParallelCorpus& corpus, const vision::VisualTokenMap* visual,
                    const std::string& direction, const EvalOptions& options = {});

struct SweepRow {
    double ratio = 0.0;
    double mean_bleu = 0.0;
    double std_bleu = 0.0; // population standard deviation over seeds
    std::vector<double> per_seed;
};

std::vector<SweepRow> mask_sweep(const model::Model& model, const text::BpeTokenizer& tokenizer,
                                 const text::ParallelCorpus& corpus, const vision::VisualTokenMap* visual,
                                 const std::string& direction, const std::vector<double>& ratios,
                                 const std::vector<std::uint64_t>& seeds, const EvalOptions& options = {});

/// CSV {direction, bleu} (plus ratio/seed columns when any report carries them).
void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
/// CSV {direction, ratio, mean_bleu, std}.
void write_sweep_csv(const std::filesystem::path& path, const std::string& direction,
                     const std::vector<SweepRow>& rows);
/// TSV {example_id, source, hypothesis, reference}.
void write_sentence_dump(const std::filesystem::path& path, const EvalReport& report);

} // namespace lvpm3::eval
