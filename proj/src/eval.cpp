#include "lvpm3/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "lvpm3/error.hpp"

namespace lvpm3::eval {

using text::kBos;
using text::kEos;
using text::kPad;

std::vector<TokenId> Hypothesis::content() const {
    std::vector<TokenId> out;
    for (TokenId t : tokens) {
        if (t != kBos && t != kEos) out.push_back(t);
    }
    return out;
}

double length_normalized(double logprob, std::size_t length, double alpha) {
    if (alpha == 0.0) return logprob;
    return logprob / std::pow(static_cast<double>(length), alpha);
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double x : logits) z += std::exp(x - m);
    const double lz = m + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
}

std::vector<double> scored_row(const StepScorer& scorer, const std::vector<TokenId>& prefix) {
    auto rows = scorer({prefix});
    if (rows.size() != 1) throw ShapeError("scorer returned " + std::to_string(rows.size()) + " rows for 1 prefix");
    return log_softmax(rows[0]);
}

} // namespace

Hypothesis beam_search(const StepScorer& scorer, std::size_t max_len, std::size_t beam, double alpha) {
    if (beam == 0) throw ConfigError("beam size must be at least 1");
    if (max_len == 0) throw ConfigError("max_len must be at least 1");

    struct Live {
        std::vector<TokenId> tokens;
        double logprob;
    };
    struct Candidate {
        double logprob;
        TokenId token;
        std::size_t parent;
    };

    std::vector<Live> live{{{kBos}, 0.0}};
    std::vector<Hypothesis> finished;
    for (std::size_t t = 1; t <= max_len; ++t) {
        std::vector<std::vector<TokenId>> prefixes;
        prefixes.reserve(live.size());
        for (const auto& h : live) prefixes.push_back(h.tokens);
        const auto logits = scorer(prefixes);
        if (logits.size() != live.size()) {
            throw ShapeError("scorer returned " + std::to_string(logits.size()) + " rows for " +
                             std::to_string(live.size()) + " prefixes");
        }
        const bool last = t == max_len;
        std::vector<Candidate> cands;
        for (std::size_t p = 0; p < live.size(); ++p) {
            const auto lp = log_softmax(logits[p]);
            if (lp.size() <= static_cast<std::size_t>(kEos)) throw ShapeError("scorer vocabulary too small");
            for (std::size_t v = 0; v < lp.size(); ++v) {
                const auto tok = static_cast<TokenId>(v);
                if (tok == kPad || tok == kBos || (last && tok != kEos)) continue;
                cands.push_back({live[p].logprob + lp[v], tok, p});
            }
        }
        const std::size_t keep = std::min(beam, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.logprob != b.logprob) return a.logprob > b.logprob;
                              if (a.token != b.token) return a.token < b.token;
                              return a.parent < b.parent;
                          });
        std::vector<Live> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const auto& c = cands[i];
            auto tokens = live[c.parent].tokens;
            tokens.push_back(c.token);
            if (c.token == kEos) {
                Hypothesis h;
                h.tokens = std::move(tokens);
                h.logprob = c.logprob;
                h.score = length_normalized(c.logprob, t, alpha);
                h.forced = last;
                finished.push_back(std::move(h));
            } else {
                next.push_back({std::move(tokens), c.logprob});
            }
        }
        live = std::move(next);
        if (live.empty() || finished.size() >= beam) break;
    }
    return *std::min_element(finished.begin(), finished.end(), better);
}

Hypothesis exhaustive_search(const StepScorer& scorer, std::size_t vocab_size, std::size_t max_len, double alpha) {
    if (max_len == 0) throw ConfigError("max_len must be at least 1");
    std::optional<Hypothesis> best;
    std::function<void(std::vector<TokenId>&, double)> visit = [&](std::vector<TokenId>& prefix, double logprob) {
        const auto lp = scored_row(scorer, prefix);
        if (lp.size() != vocab_size) throw ShapeError("scorer vocabulary does not match vocab_size");
        const std::size_t generated = prefix.size(); // content tokens so far + the EOS to come
        Hypothesis h;
        h.tokens = prefix;
        h.tokens.push_back(kEos);
        h.logprob = logprob + lp[kEos];
        h.score = length_normalized(h.logprob, generated, alpha);
        h.forced = generated == max_len;
        if (!best || better(h, *best)) best = h;
        if (generated == max_len) return;
        for (std::size_t v = 0; v < vocab_size; ++v) {
            const auto tok = static_cast<TokenId>(v);
            if (tok == kPad || tok == kBos || tok == kEos) continue;
            prefix.push_back(tok);
            visit(prefix, logprob + lp[v]);
            prefix.pop_back();
        }
    };
    std::vector<TokenId> prefix{kBos};
    visit(prefix, 0.0);
    return *best;
}

StepScorer model_scorer(const model::Model& model, const std::vector<TokenId>& source_ids,
                        const vision::VisualTokens* visual) {
    std::vector<const vision::VisualTokens*> vis;
    if (model.config().uses_vision()) {
        if (!visual) throw FormatError("this model needs visual tokens for every sentence");
        vis.push_back(visual);
    }
    const model::Batch batch = model::make_batch({source_ids}, {{kEos}}, vis);
    ad::Tensor memory;
    {
        ad::NoGradGuard no_grad;
        memory = model.memory(batch);
    }
    return [&model, memory, source_ids](const std::vector<std::vector<TokenId>>& prefixes) {
        ad::NoGradGuard no_grad;
        const std::size_t n = prefixes.size(), len = prefixes.front().size();
        const std::size_t src_len = memory.dim(1), d = memory.dim(2), vocab = model.config().vocab_size;
        std::vector<float> tiled;
        tiled.reserve(n * memory.numel());
        std::vector<TokenId> sources, inputs;
        for (const auto& p : prefixes) {
            if (p.size() != len) throw ShapeError("beam prefixes must share one length");
            tiled.insert(tiled.end(), memory.data().begin(), memory.data().end());
            sources.insert(sources.end(), source_ids.begin(), source_ids.end());
            inputs.insert(inputs.end(), p.begin(), p.end());
        }
        const ad::Tensor mem({n, src_len, d}, std::move(tiled));
        const auto logits = model.decode(mem, sources, inputs, len);
        std::vector<std::vector<double>> out(n, std::vector<double>(vocab));
        for (std::size_t i = 0; i < n; ++i) {
            const float* row = logits.data().data() + (i * len + len - 1) * vocab;
            std::copy(row, row + vocab, out[i].begin());
        }
        return out;
    };
}

Hypothesis translate(const model::Model& model, const std::vector<TokenId>& source_ids,
                     const vision::VisualTokens* visual, const BeamOptions& options) {
    std::size_t max_len = options.max_len;
    if (max_len == 0) {
        std::size_t content = 0;
        for (std::size_t i = 1; i < source_ids.size(); ++i) {
            const TokenId t = source_ids[i];
            content += t != kBos && t != kEos && t != kPad;
        }
        max_len = 2 * content + 8;
    }
    return beam_search(model_scorer(model, source_ids, visual), max_len, options.beam, options.alpha);
}

// ---- BLEU ----

BleuStats& BleuStats::operator+=(const BleuStats& other) {
    for (std::size_t n = 0; n < 4; ++n) {
        matches[n] += other.matches[n];
        totals[n] += other.totals[n];
    }
    hyp_len += other.hyp_len;
    ref_len += other.ref_len;
    return *this;
}

BleuStats bleu_stats(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
    BleuStats s;
    s.hyp_len = hypothesis.size();
    s.ref_len = reference.size();
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, std::size_t> ref_counts;
        for (std::size_t i = 0; i + n <= reference.size(); ++i) {
            ++ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)];
        }
        std::map<std::vector<std::string>, std::size_t> hyp_counts;
        for (std::size_t i = 0; i + n <= hypothesis.size(); ++i) {
            ++hyp_counts[std::vector<std::string>(hypothesis.begin() + i, hypothesis.begin() + i + n)];
        }
        for (const auto& [gram, count] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
            s.totals[n - 1] += count;
        }
    }
    return s;
}

double bleu_from_stats(const BleuStats& s) {
    if (s.hyp_len == 0) return 0.0;
    double log_precision = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (s.matches[n] == 0) return 0.0;
        log_precision += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n])) / 4.0;
    }
    const double bp = s.hyp_len < s.ref_len
                          ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
                          : 1.0;
    return 100.0 * bp * std::exp(log_precision);
}

double bleu4(const std::vector<std::vector<std::string>>& hypotheses,
             const std::vector<std::vector<std::string>>& references) {
    if (hypotheses.empty()) throw ConfigError("BLEU needs at least one sentence");
    if (hypotheses.size() != references.size()) {
        throw ConfigError("BLEU got " + std::to_string(hypotheses.size()) + " hypotheses for " +
                          std::to_string(references.size()) + " references");
    }
    BleuStats total;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
    return bleu_from_stats(total);
}

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   bool lowercase) {
    auto split = [&](std::string s) {
        if (lowercase) {
            std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        }
        std::istringstream in(s);
        std::vector<std::string> out;
        for (std::string w; in >> w;) out.push_back(w);
        return out;
    };
    std::vector<std::vector<std::string>> h, r;
    for (const auto& s : hypotheses) h.push_back(split(s));
    for (const auto& s : references) r.push_back(split(s));
    return bleu4(h, r);
}

// ---- corpus evaluation ----

EvalReport evaluate(const model::Model& model, const text::BpeTokenizer& tokenizer,
                    const text::ParallelCorpus& corpus, const vision::VisualTokenMap* visual,
                    const std::string& direction, const EvalOptions& options) {
    const auto [src, tgt] = text::parse_direction(direction);
    if (src != corpus.manifest.source_lang) {
        throw LanguageError("direction " + direction + " does not start from the corpus source language '" +
                            corpus.manifest.source_lang + "'");
    }
    if (!corpus.lines.count(tgt)) throw LanguageError("corpus has no text for target language '" + tgt + "'");
    if (model.config().uses_vision() && !visual) {
        throw FormatError("variant " + std::string(model::variant_name(model.config().variant)) +
                          " needs a VTOK file for evaluation");
    }

    EvalReport report;
    report.direction = direction;
    if (options.mask_ratio) {
        report.ratio = options.mask_ratio;
        report.seed = options.mask_seed;
    }
    const auto examples = text::build_examples(corpus, tokenizer, {tgt});
    std::vector<std::string> hyps, refs;
    for (const auto& ex : examples) {
        auto ids = ex.source_ids;
        if (options.mask_ratio) {
            ids = text::mask_source(ids, *options.mask_ratio, mix64(options.mask_seed, ex.line), tokenizer.vocab());
        }
        const vision::VisualTokens* vis = nullptr;
        if (model.config().uses_vision()) {
            auto it = visual->find(ex.image_id);
            if (it == visual->end()) {
                throw FormatError("VTOK file has no entry for image '" + ex.image_id + "' (line " +
                                  std::to_string(ex.line + 1) + ")");
            }
            vis = &it->second;
        }
        const auto hyp = translate(model, ids, vis, options.beam);
        SentenceResult r;
        r.example_id = ex.example_id;
        r.source = corpus.lines.at(src)[ex.line];
        r.hypothesis = tokenizer.decode(hyp.content());
        r.reference = corpus.lines.at(tgt)[ex.line];
        hyps.push_back(r.hypothesis);
        refs.push_back(r.reference);
        report.sentences.push_back(std::move(r));
    }
    report.bleu = corpus_bleu(hyps, refs, options.lowercase);
    return report;
}

std::vector<SweepRow> mask_sweep(const model::Model& model, const text::BpeTokenizer& tokenizer,
                                 const text::ParallelCorpus& corpus, const vision::VisualTokenMap* visual,
                                 const std::string& direction, const std::vector<double>& ratios,
                                 const std::vector<std::uint64_t>& seeds, const EvalOptions& options) {
    if (seeds.empty()) throw ConfigError("mask sweep needs at least one seed");
    std::vector<SweepRow> rows;
    for (double ratio : ratios) {
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("masking ratio " + std::to_string(ratio) + " is outside [0, 1]");
        SweepRow row;
        row.ratio = ratio;
        for (std::uint64_t seed : seeds) {
            EvalOptions opts = options;
            opts.mask_ratio = ratio;
            opts.mask_seed = seed;
            row.per_seed.push_back(evaluate(model, tokenizer, corpus, visual, direction, opts).bleu);
        }
        const double n = static_cast<double>(row.per_seed.size());
        row.mean_bleu = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) / n;
        double var = 0.0;
        for (double b : row.per_seed) var += (b - row.mean_bleu) * (b - row.mean_bleu) / n;
        row.std_bleu = std::sqrt(var);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out.precision(10);
    return out;
}

std::string tsv_field(std::string s) {
    std::replace_if(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
    return s;
}

} // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
    const bool any_ratio = std::any_of(reports.begin(), reports.end(), [](const auto& r) { return r.ratio.has_value(); });
    auto out = open_out(path);
    out << "direction" << (any_ratio ? ",ratio,seed" : "") << ",bleu\n";
    for (const auto& r : reports) {
        out << r.direction;
        if (any_ratio) {
            out << ',' << (r.ratio ? std::to_string(*r.ratio) : "") << ',' << (r.seed ? std::to_string(*r.seed) : "");
        }
        out << ',' << r.bleu << '\n';
    }
}

void write_sweep_csv(const std::filesystem::path& path, const std::string& direction,
                     const std::vector<SweepRow>& rows) {
    auto out = open_out(path);
    out << "direction,ratio,mean_bleu,std\n";
    for (const auto& r : rows) out << direction << ',' << r.ratio << ',' << r.mean_bleu << ',' << r.std_bleu << '\n';
}

void write_sentence_dump(const std::filesystem::path& path, const EvalReport& report) {
    auto out = open_out(path);
    out << "example_id\tsource\thypothesis\treference\n";
    for (const auto& s : report.sentences) {
        out << tsv_field(s.example_id) << '\t' << tsv_field(s.source) << '\t' << tsv_field(s.hypothesis) << '\t'
            << tsv_field(s.reference) << '\n';
    }
}

} // namespace lvpm3::eval
