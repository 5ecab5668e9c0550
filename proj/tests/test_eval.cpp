#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "lvpm3/error.hpp"
#include "lvpm3/eval.hpp"
#include "lvpm3/rng.hpp"
#include "test_support.hpp"

using namespace lvpm3;
using namespace lvpm3::eval;
using lvpm3::testing::ToyData;
using model::Variant;
using text::kBos;
using text::kEos;
using text::kPad;

namespace {

/// Fixed pseudo-random logits for every prefix: a deterministic function of (seed, prefix).
StepScorer random_scorer(std::uint64_t seed, std::size_t vocab) {
    return [seed, vocab](const std::vector<std::vector<TokenId>>& prefixes) {
        std::vector<std::vector<double>> out;
        for (const auto& p : prefixes) {
            std::uint64_t h = seed;
            for (TokenId t : p) h = mix64(h, static_cast<std::uint64_t>(t));
            Rng rng(h);
            std::vector<double> row(vocab);
            for (auto& x : row) x = rng.uniform(-3.0, 3.0);
            out.push_back(row);
        }
        return out;
    };
}

/// Scorer where a short and a longer output compete: P(EOS | BOS) = 0.5, P(5 | BOS) = 0.45,
/// P(EOS | BOS 5) = 0.7.
StepScorer length_scorer() {
    return [](const std::vector<std::vector<TokenId>>& prefixes) {
        std::vector<std::vector<double>> out;
        for (const auto& p : prefixes) {
            std::vector<double> prob(8, 0.0);
            if (p.size() == 1) {
                prob[kEos] = 0.5;
                prob[5] = 0.45;
                for (TokenId t : {3, 4, 6, 7}) prob[t] = 0.0125;
            } else {
                prob[kEos] = 0.7;
                for (TokenId t : {3, 4, 5, 6, 7}) prob[t] = 0.06;
            }
            std::vector<double> logits(8);
            for (std::size_t i = 0; i < 8; ++i) logits[i] = prob[i] > 0 ? std::log(prob[i]) : -1e9;
            out.push_back(logits);
        }
        return out;
    };
}

Hypothesis greedy(const StepScorer& scorer, std::size_t max_len) {
    Hypothesis h;
    h.tokens = {kBos};
    for (std::size_t t = 1; t <= max_len; ++t) {
        const auto lp = log_softmax(scorer({h.tokens})[0]);
        TokenId best = kEos;
        if (t < max_len) {
            double best_lp = -INFINITY;
            for (std::size_t v = 0; v < lp.size(); ++v) {
                if (v == kPad || v == kBos) continue;
                if (lp[v] > best_lp) {
                    best_lp = lp[v];
                    best = static_cast<TokenId>(v);
                }
            }
        }
        h.tokens.push_back(best);
        h.logprob += lp[best];
        if (best == kEos) break;
    }
    return h;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("length normalization and log-softmax") {
    CHECK(length_normalized(-6.0, 3, 1.0) == doctest::Approx(-2.0));
    CHECK(length_normalized(-6.0, 3, 0.0) == -6.0);
    CHECK(length_normalized(-8.0, 4, 0.5) == doctest::Approx(-4.0));
    const auto lp = log_softmax({1.0, 2.0, 3.0});
    double z = 0;
    for (double x : lp) z += std::exp(x);
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lp[2] - lp[0] == doctest::Approx(2.0));
    const auto big = log_softmax({1000.0, 1000.0});
    CHECK(big[0] == doctest::Approx(std::log(0.5)));
}

TEST_CASE("beam of width 1 is greedy decoding") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto scorer = random_scorer(seed, 9);
        const auto b = beam_search(scorer, 6, 1, 1.0);
        const auto g = greedy(scorer, 6);
        CAPTURE(seed);
        CHECK(b.tokens == g.tokens);
        CHECK(b.logprob == doctest::Approx(g.logprob).epsilon(1e-12));
    }
}

TEST_CASE("a beam covering every prefix equals the exhaustive optimum; narrower beams never beat it") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto scorer = random_scorer(seed, 8);
        const auto oracle = exhaustive_search(scorer, 8, 4, 1.0);
        const auto wide = beam_search(scorer, 4, 4096, 1.0);
        CAPTURE(seed);
        CHECK(wide.tokens == oracle.tokens);
        CHECK(wide.score == doctest::Approx(oracle.score).epsilon(1e-12));
        for (std::size_t beam = 1; beam <= 6; ++beam) {
            CHECK(beam_search(scorer, 4, beam, 1.0).score <= oracle.score + 1e-12);
        }
    }
}

TEST_CASE("hypotheses never contain PAD or BOS after the start; max_len forces EOS") {
    const auto scorer = [](const std::vector<std::vector<TokenId>>& prefixes) {
        // PAD, BOS and EOS are heavily disfavoured; decoding must still end
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < prefixes.size(); ++i) out.push_back({10.0, 10.0, -10.0, 0.0, 1.0, 0.5});
        return out;
    };
    const auto h = beam_search(scorer, 5, 3, 1.0);
    CHECK(h.tokens.front() == kBos);
    CHECK(h.tokens.back() == kEos);
    CHECK(h.tokens.size() == 6);
    CHECK(h.forced);
    for (std::size_t i = 1; i < h.tokens.size(); ++i) {
        CHECK(h.tokens[i] != kPad);
        CHECK(h.tokens[i] != kBos);
    }
    CHECK(h.content() == std::vector<TokenId>{4, 4, 4, 4});
    const auto unforced = beam_search(length_scorer(), 5, 5, 1.0);
    CHECK_FALSE(unforced.forced);
    CHECK_THROWS_AS(beam_search(scorer, 5, 0, 1.0), ConfigError);
    CHECK_THROWS_AS(beam_search(scorer, 0, 5, 1.0), ConfigError);
}

TEST_CASE("length penalty changes the winner on a constructed scorer") {
    const auto scorer = length_scorer();
    // alpha = 0: EOS at once, log 0.5 > log(0.45 * 0.7)
    const auto raw = beam_search(scorer, 5, 5, 0.0);
    CHECK(raw.content().empty());
    CHECK(raw.logprob == doctest::Approx(std::log(0.5)));
    CHECK(exhaustive_search(scorer, 8, 5, 0.0).tokens == raw.tokens);
    // alpha = 1: log(0.315) / 2 > log(0.5) / 1
    const auto normalized = beam_search(scorer, 5, 5, 1.0);
    CHECK(normalized.content() == std::vector<TokenId>{5});
    CHECK(normalized.score == doctest::Approx(std::log(0.45 * 0.7) / 2.0));
    CHECK(exhaustive_search(scorer, 8, 5, 1.0).tokens == normalized.tokens);
}

TEST_CASE("BLEU matches reference values") {
    // corpus-level, unsmoothed, whitespace tokens; values cross-checked against an
    // independent implementation
    CHECK(corpus_bleu({"the cat sat on the mat today", "a dog runs in the park"},
                      {"the cat sat on a mat today", "a dog runs through the big park"}) ==
          doctest::Approx(35.65249133455411).epsilon(1e-8));
    CHECK(corpus_bleu({"the the the the cat the cat sat down", "he said that he said it"},
                      {"the cat sat down on the rug", "he said that it was he who said it"}) ==
          doctest::Approx(29.77116848926267).epsilon(1e-8));
    // brevity penalty active: 16 hypothesis tokens against 22
    CHECK(corpus_bleu({"the quick brown fox jumps over the dog", "a small boy plays with a red ball"},
                      {"the quick brown fox jumps over the lazy dog today",
                       "a small boy plays with a big red ball in the park"}) ==
          doctest::Approx(56.29148396230506).epsilon(1e-8));
    // no matching 4-gram: unsmoothed BLEU is zero
    CHECK(corpus_bleu({"there is a cat on the mat", "it is raining hard now"},
                      {"there is a small cat sitting on the mat", "it is raining very hard right now outside"}) == 0.0);
    CHECK(corpus_bleu({"alpha beta gamma delta"}, {"one two three four"}) == 0.0);
    CHECK(corpus_bleu({"a b c d e", "f g h i"}, {"a b c d e", "f g h i"}) == doctest::Approx(100.0));

    const auto stats = bleu_stats({"the", "the", "the", "the", "cat", "the", "cat", "sat", "down"},
                                  {"the", "cat", "sat", "down", "on", "the", "rug"});
    CHECK(stats.matches[0] == 5); // "the" clipped to 2, "cat" to 1, "sat", "down"
    CHECK(stats.totals[0] == 9);
    CHECK(stats.hyp_len == 9);
    CHECK(stats.ref_len == 7);
}

TEST_CASE("BLEU brevity penalty, casing and argument checks") {
    // hypothesis of 4 tokens against 8: precision 1, BP = exp(1 - 8/4)
    CHECK(corpus_bleu({"a b c d"}, {"a b c d e f g h"}) == doctest::Approx(100.0 * std::exp(-1.0)));
    // longer hypothesis: no penalty, precisions 4/8, 3/7, 2/6, 1/5
    CHECK(corpus_bleu({"a b c d e f g h"}, {"a b c d"}) ==
          doctest::Approx(100.0 * std::pow(4.0 / 8 * 3.0 / 7 * 2.0 / 6 * 1.0 / 5, 0.25)));
    CHECK(corpus_bleu({"A B C D"}, {"a b c d"}) == 0.0);
    CHECK(corpus_bleu({"A B C D"}, {"a b c d"}, true) == doctest::Approx(100.0));
    CHECK(corpus_bleu({""}, {"a b c d"}) == 0.0);
    CHECK_THROWS_AS(corpus_bleu({}, {}), ConfigError);
    CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), ConfigError);
}

TEST_CASE("model scorer agrees with a teacher-forced decoder pass") {
    ToyData data("eval_scorer", 4);
    const model::Model m(data.model_config(Variant::full), 3);
    const auto& ex = data.examples.front();
    const auto* vis = &data.visual.at(ex.image_id);
    const auto scorer = model_scorer(m, ex.source_ids, vis);
    std::vector<TokenId> prefix{kBos};
    prefix.insert(prefix.end(), ex.target_ids.begin(), ex.target_ids.end() - 1);
    const auto rows = scorer({prefix, prefix});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == rows[1]);

    ad::NoGradGuard no_grad;
    const auto batch = model::make_batch({ex.source_ids}, {ex.target_ids}, {vis});
    const auto logits = m.decode(m.memory(batch), batch.source, batch.decoder_input, batch.tgt_len);
    const std::size_t vocab = m.config().vocab_size, last = batch.tgt_len - 1;
    for (std::size_t v = 0; v < vocab; ++v) CHECK(rows[0][v] == doctest::Approx(logits.data()[last * vocab + v]).epsilon(1e-5));
    CHECK_THROWS_AS(model_scorer(m, ex.source_ids, nullptr), FormatError);

    const auto g = greedy(scorer, 10);
    BeamOptions opts;
    opts.beam = 1;
    opts.max_len = 10;
    CHECK(translate(m, ex.source_ids, vis, opts).tokens == g.tokens);
}

TEST_CASE("corpus evaluation, masking sweep and report files") {
    ToyData data("eval_corpus", 5);
    const model::Model m(data.model_config(Variant::full), 3);
    EvalOptions opts;
    opts.beam.beam = 2;

    const auto report = evaluate(m, data.tokenizer, data.corpus, &data.visual, "en-de", opts);
    CHECK(report.direction == "en-de");
    REQUIRE(report.sentences.size() == 5);
    CHECK(report.sentences[0].reference == data.corpus.lines.at("de")[0]);
    CHECK(report.sentences[0].source == data.corpus.lines.at("en")[0]);
    CHECK_FALSE(report.ratio.has_value());
    std::vector<std::string> hyps, refs;
    for (const auto& s : report.sentences) {
        hyps.push_back(s.hypothesis);
        refs.push_back(s.reference);
    }
    CHECK(report.bleu == corpus_bleu(hyps, refs));

    auto unmasked = opts;
    unmasked.mask_ratio = 0.0;
    unmasked.mask_seed = 4;
    const auto zero = evaluate(m, data.tokenizer, data.corpus, &data.visual, "en-de", unmasked);
    for (std::size_t i = 0; i < 5; ++i) CHECK(zero.sentences[i].hypothesis == report.sentences[i].hypothesis);

    const auto rows = mask_sweep(m, data.tokenizer, data.corpus, &data.visual, "en-de", {0.0, 0.5, 1.0}, {1, 2, 3}, opts);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].mean_bleu == report.bleu);
    CHECK(rows[0].std_bleu == 0.0);
    for (const auto& row : rows) {
        REQUIRE(row.per_seed.size() == 3);
        double mean = 0, var = 0;
        for (double b : row.per_seed) mean += b / 3;
        for (double b : row.per_seed) var += (b - mean) * (b - mean) / 3;
        CHECK(row.mean_bleu == doctest::Approx(mean));
        CHECK(row.std_bleu == doctest::Approx(std::sqrt(var)));
    }
    write_sweep_csv(data.dir / "sweep_a.csv", "en-de", rows);
    const auto again = mask_sweep(m, data.tokenizer, data.corpus, &data.visual, "en-de", {0.0, 0.5, 1.0}, {1, 2, 3}, opts);
    write_sweep_csv(data.dir / "sweep_b.csv", "en-de", again);
    CHECK(slurp(data.dir / "sweep_a.csv") == slurp(data.dir / "sweep_b.csv"));
    CHECK(slurp(data.dir / "sweep_a.csv").rfind("direction,ratio,mean_bleu,std\n", 0) == 0);

    write_report_csv(data.dir / "report.csv", {report, zero});
    const auto csv = slurp(data.dir / "report.csv");
    CHECK(csv.rfind("direction,ratio,seed,bleu\n", 0) == 0);
    CHECK(csv.find("en-de,0.000000,4,") != std::string::npos);
    write_sentence_dump(data.dir / "dump.tsv", report);
    std::ifstream dump(data.dir / "dump.tsv");
    std::size_t lines = 0;
    for (std::string l; std::getline(dump, l);) ++lines;
    CHECK(lines == 6);

    CHECK_THROWS_AS(evaluate(m, data.tokenizer, data.corpus, &data.visual, "de-en", opts), LanguageError);
    CHECK_THROWS_AS(evaluate(m, data.tokenizer, data.corpus, &data.visual, "en-cs", opts), LanguageError);
    CHECK_THROWS_AS(evaluate(m, data.tokenizer, data.corpus, nullptr, "en-de", opts), FormatError);
    vision::VisualTokenMap partial = data.visual;
    partial.erase(data.corpus.image_ids[2]);
    CHECK_THROWS_AS(evaluate(m, data.tokenizer, data.corpus, &partial, "en-de", opts), FormatError);
    CHECK_THROWS_AS(mask_sweep(m, data.tokenizer, data.corpus, &data.visual, "en-de", {1.5}, {1}, opts), ConfigError);
    CHECK_THROWS_AS(mask_sweep(m, data.tokenizer, data.corpus, &data.visual, "en-de", {0.5}, {}, opts), ConfigError);

    const model::Model text_only(data.model_config(Variant::text_only), 3);
    CHECK_NOTHROW(evaluate(text_only, data.tokenizer, data.corpus, nullptr, "en-fr", opts));
}

TEST_CASE("widening the beam never lowers the returned score on the oracle set") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto scorer = random_scorer(seed, 8);
        double previous = -INFINITY;
        for (std::size_t beam : {1, 2, 3, 4, 5, 8, 16, 64, 4096}) {
            const double score = beam_search(scorer, 4, beam, 1.0).score;
            CAPTURE(seed);
            CAPTURE(beam);
            CHECK(score >= previous);
            previous = score;
        }
    }
}

TEST_CASE("beam search is deterministic and BLEU ignores sentence order") {
    const auto scorer = random_scorer(7, 10);
    CHECK(beam_search(scorer, 6, 5, 1.0).tokens == beam_search(scorer, 6, 5, 1.0).tokens);
    const std::vector<std::string> h{"the cat sat on the mat today", "a dog runs in the park", "x y z w v"};
    const std::vector<std::string> r{"the cat sat on a mat today", "a dog runs through the big park", "x y z w"};
    CHECK(corpus_bleu(h, r) == corpus_bleu({h[2], h[0], h[1]}, {r[2], r[0], r[1]}));
}
