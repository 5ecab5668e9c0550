#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lvpm3/checkpoint.hpp"
#include "lvpm3/error.hpp"
#include "lvpm3/eval.hpp"
#include "lvpm3/gradcheck_suite.hpp"
#include "lvpm3/toy_corpus.hpp"
#include "lvpm3/train.hpp"

using namespace lvpm3;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::vector<std::string> lines;
    auto consume = [&](std::istream& in) {
        for (std::string line; std::getline(in, line);) lines.push_back(line);
    };
    if (path == "-") {
        consume(std::cin);
    } else {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot read " + path);
        consume(in);
    }
    return lines;
}

struct LoadedModel {
    model::Model model;
    text::BpeTokenizer tokenizer;
};

LoadedModel load_model(const std::string& path) {
    const auto ckpt = model::load_checkpoint(path);
    if (!ckpt.has_tokenizer()) throw FormatError("checkpoint " + path + " does not bundle a tokenizer");
    return {ckpt.build_model(), ckpt.tokenizer()};
}

/// Visual tokens named by the manifest, or none for text-only models.
vision::VisualTokenMap load_visual(const model::Model& m, const text::CorpusManifest& manifest) {
    if (!m.config().uses_vision()) return {};
    if (manifest.vtok_path.empty()) {
        throw FormatError("variant " + std::string(model::variant_name(m.config().variant)) +
                          " needs visual tokens but the manifest has no vtok_path");
    }
    return vision::read_vtok(manifest.vtok_path);
}

struct TrainArgs {
    std::string config;
    std::string resume;
    std::size_t log_every = 10;
};

int run_train(const TrainArgs& a) {
    const auto cfg = train::TrainConfig::load(a.config);
    std::optional<std::filesystem::path> resume;
    if (!a.resume.empty()) resume = a.resume;
    const auto result = train::run_training(cfg, resume, [&](const train::StepLog& log) {
        if (a.log_every && log.step % a.log_every == 0) {
            std::printf("step %llu epoch %llu lr %.3e loss %.4f tok/s %.0f\n", static_cast<unsigned long long>(log.step),
                        static_cast<unsigned long long>(log.epoch), log.lr, log.loss, log.tokens_per_sec);
            std::fflush(stdout);
        }
    });
    std::printf("trained %zu steps; checkpoint %s\n", result.logs.size(), result.last_checkpoint.string().c_str());
    return 0;
}

struct TranslateArgs {
    std::string ckpt;
    std::string tgt_lang;
    std::string input = "-";
    std::string vtok;
    std::string image_ids;
    std::size_t beam = 5;
    double alpha = 1.0;
    std::size_t max_len = 0;
};

int run_translate(const TranslateArgs& a) {
    const auto [m, tok] = load_model(a.ckpt);
    const auto lines = read_lines(a.input);
    std::vector<std::string> ids;
    vision::VisualTokenMap visual;
    if (m.config().uses_vision()) {
        if (a.vtok.empty() || a.image_ids.empty()) {
            throw ConfigError("variant " + std::string(model::variant_name(m.config().variant)) +
                              " needs --vtok and --image-ids");
        }
        visual = vision::read_vtok(a.vtok);
        ids = read_lines(a.image_ids);
        if (ids.size() != lines.size()) {
            throw FormatError(a.image_ids + " has " + std::to_string(ids.size()) + " ids for " +
                              std::to_string(lines.size()) + " input lines");
        }
    }
    eval::BeamOptions opts{a.beam, a.alpha, a.max_len};
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto source = text::prefix_target_token(tok.encode(lines[i]), a.tgt_lang, tok.vocab());
        const vision::VisualTokens* vis = nullptr;
        if (m.config().uses_vision()) {
            auto it = visual.find(ids[i]);
            if (it == visual.end()) throw FormatError(a.vtok + " has no entry for image '" + ids[i] + "'");
            vis = &it->second;
        }
        std::cout << tok.decode(eval::translate(m, source, vis, opts).content()) << '\n';
    }
    return 0;
}

struct EvalArgs {
    std::string ckpt;
    std::string manifest;
    std::string direction;
    std::string out;
    std::string dump;
    std::size_t beam = 5;
    double alpha = 1.0;
    bool lowercase = false;
    std::vector<double> ratios;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

int run_evaluate(const EvalArgs& a) {
    const auto [m, tok] = load_model(a.ckpt);
    const auto corpus = text::load_corpus(text::CorpusManifest::load(a.manifest));
    const auto visual = load_visual(m, corpus.manifest);
    eval::EvalOptions opts;
    opts.beam.beam = a.beam;
    opts.beam.alpha = a.alpha;
    opts.lowercase = a.lowercase;
    const auto report = eval::evaluate(m, tok, corpus, m.config().uses_vision() ? &visual : nullptr, a.direction, opts);
    eval::write_report_csv(a.out, {report});
    if (!a.dump.empty()) eval::write_sentence_dump(a.dump, report);
    std::printf("%s BLEU %.2f\n", a.direction.c_str(), report.bleu);
    return 0;
}

int run_mask_sweep(const EvalArgs& a) {
    const auto [m, tok] = load_model(a.ckpt);
    const auto corpus = text::load_corpus(text::CorpusManifest::load(a.manifest));
    const auto visual = load_visual(m, corpus.manifest);
    eval::EvalOptions opts;
    opts.beam.beam = a.beam;
    opts.beam.alpha = a.alpha;
    opts.lowercase = a.lowercase;
    const auto rows = eval::mask_sweep(m, tok, corpus, m.config().uses_vision() ? &visual : nullptr, a.direction,
                                       a.ratios, a.seeds, opts);
    eval::write_sweep_csv(a.out, a.direction, rows);
    for (const auto& r : rows) std::printf("ratio %.2f BLEU %.2f +- %.2f\n", r.ratio, r.mean_bleu, r.std_bleu);
    return 0;
}

int run_gradcheck(bool full_model, std::uint64_t seed) {
    bool ok = true;
    ad::run_gradcheck_suite(full_model, seed, [&](const ad::SuiteResult& r) {
        ok &= r.report.passed;
        std::printf("%-4s %-36s entries %6zu  refined %4zu  max rel err %.3e (%s)\n", r.report.passed ? "ok" : "FAIL",
                    r.name.c_str(), r.report.entries_checked, r.report.refined_entries, r.report.max_rel_error,
                    r.report.worst_entry.c_str());
        std::fflush(stdout);
    });
    std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
    return ok ? 0 : 1;
}

struct VtokArgs {
    bool pseudo = false;
    std::string ids;
    std::size_t mv = 0;
    std::size_t dv = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_make_vtok(const VtokArgs& a) {
    if (!a.pseudo) {
        throw ConfigError("only --pseudo features can be generated here; real features come from an external backbone");
    }
    std::vector<vision::VisualTokens> records;
    for (const auto& id : read_lines(a.ids)) {
        if (!id.empty()) records.push_back(vision::pseudo_visual_tokens(id, a.mv, a.dv, a.seed));
    }
    vision::write_vtok(records, a.out);
    std::printf("wrote %zu records to %s\n", records.size(), a.out.c_str());
    return 0;
}

struct BpeArgs {
    std::vector<std::string> corpus;
    std::size_t vocab_size = 8000;
    std::size_t min_freq = 2;
    std::vector<std::string> languages;
    std::string out;
};

int run_bpe_train(const BpeArgs& a) {
    std::vector<std::string> lines;
    std::vector<std::string> languages = a.languages;
    for (const auto& path : a.corpus) {
        const auto l = read_lines(path);
        lines.insert(lines.end(), l.begin(), l.end());
        if (a.languages.empty()) languages.push_back(std::filesystem::path(path).stem().string());
    }
    text::BpeTrainOptions opts;
    opts.vocab_size = a.vocab_size;
    opts.min_freq = a.min_freq;
    opts.languages = languages;
    const auto tok = text::train_bpe(lines, opts);
    tok.save(a.out);
    std::printf("vocabulary %zu (%zu merges) written to %s.vocab / %s.merges\n", tok.vocab().size(),
                tok.merges().size(), a.out.c_str(), a.out.c_str());
    return 0;
}

struct ToyArgs {
    std::string out;
    std::size_t pairs = 32;
    std::vector<std::string> targets{"de", "fr", "cs"};
    std::size_t mv = 4;
    std::size_t dv = 32;
    std::uint64_t seed = 1;
};

int run_make_toy(const ToyArgs& a) {
    toy::ToyCorpusOptions opts;
    opts.num_pairs = a.pairs;
    opts.target_langs = a.targets;
    opts.seed = a.seed;
    toy::write_toy_corpus(toy::make_toy_corpus(opts), a.out, "train", a.mv, a.dv, a.seed);
    std::printf("toy corpus with %zu pairs written to %s\n", a.pairs, a.out.c_str());
    return 0;
}

int run_bleu(const std::string& hyp, const std::string& ref, bool lowercase) {
    std::printf("%.6f\n", eval::corpus_bleu(read_lines(hyp), read_lines(ref), lowercase));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lvpm3: multilingual multimodal translation with language-aware visual prompts"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
    train_cmd->add_option("--config", train_args.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--resume", train_args.resume, "Checkpoint with training state")->check(CLI::ExistingFile);
    train_cmd->add_option("--log-every", train_args.log_every, "Print every N steps (0 = quiet)");

    TranslateArgs tr;
    auto* translate_cmd = app.add_subcommand("translate", "Translate sentences with beam search");
    translate_cmd->add_option("--ckpt", tr.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    translate_cmd->add_option("--tgt-lang", tr.tgt_lang, "Target language code")->required();
    translate_cmd->add_option("--input", tr.input, "Source sentences, one per line ('-' = stdin)");
    translate_cmd->add_option("--vtok", tr.vtok, "Visual tokens (visual variants)")->check(CLI::ExistingFile);
    translate_cmd->add_option("--image-ids", tr.image_ids, "Image id per input line")->check(CLI::ExistingFile);
    translate_cmd->add_option("--beam", tr.beam, "Beam size")->check(CLI::PositiveNumber);
    translate_cmd->add_option("--alpha", tr.alpha, "Length penalty exponent");
    translate_cmd->add_option("--max-len", tr.max_len, "Maximum output length (0 = 2 * source + 8)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "Decode a corpus and score corpus BLEU");
    EvalArgs sw;
    auto* sweep_cmd = app.add_subcommand("mask-sweep", "BLEU under increasing source masking");
    for (auto [cmd, args] : {std::pair{eval_cmd, &ev}, std::pair{sweep_cmd, &sw}}) {
        cmd->add_option("--ckpt", args->ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", args->manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--direction", args->direction, "Direction such as en-de")->required();
        cmd->add_option("--out", args->out, "Output CSV")->required();
        cmd->add_option("--beam", args->beam, "Beam size")->check(CLI::PositiveNumber);
        cmd->add_option("--alpha", args->alpha, "Length penalty exponent");
        cmd->add_flag("--lowercase", args->lowercase, "Case-insensitive BLEU");
    }
    eval_cmd->add_option("--dump", ev.dump, "Per-sentence TSV dump");
    sweep_cmd->add_option("--ratios", sw.ratios, "Comma-separated masking ratios")->required()->delimiter(',');
    sweep_cmd->add_option("--seeds", sw.seeds, "Comma-separated masking seeds")->delimiter(',');

    bool full_model = false;
    std::uint64_t gc_seed = 1;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the autodiff engine");
    gc_cmd->add_flag("--full-model", full_model, "Also check the composed loss of every variant");
    gc_cmd->add_option("--seed", gc_seed, "Seed for inputs and sampled entries");

    VtokArgs vt;
    auto* vtok_cmd = app.add_subcommand("make-vtok", "Write a VTOK visual-token file");
    vtok_cmd->add_flag("--pseudo", vt.pseudo, "Deterministic pseudo features")->required();
    vtok_cmd->add_option("--ids", vt.ids, "Image ids, one per line")->required()->check(CLI::ExistingFile);
    vtok_cmd->add_option("--mv", vt.mv, "Visual tokens per image")->required()->check(CLI::PositiveNumber);
    vtok_cmd->add_option("--dv", vt.dv, "Visual token width")->required()->check(CLI::PositiveNumber);
    vtok_cmd->add_option("--seed", vt.seed, "Feature seed");
    vtok_cmd->add_option("--out", vt.out, "Output path")->required();

    BpeArgs bp;
    auto* bpe_cmd = app.add_subcommand("bpe-train", "Train the byte-level BPE tokenizer");
    bpe_cmd->add_option("--corpus", bp.corpus, "Text files")->required()->check(CLI::ExistingFile);
    bpe_cmd->add_option("--vocab-size", bp.vocab_size, "Target vocabulary size");
    bpe_cmd->add_option("--min-freq", bp.min_freq, "Stop when the best pair is rarer than this");
    bpe_cmd->add_option("--languages", bp.languages, "Language tags (default: corpus file stems)")->delimiter(',');
    bpe_cmd->add_option("--out", bp.out, "Output prefix")->required();

    ToyArgs ty;
    auto* toy_cmd = app.add_subcommand("make-toy-corpus", "Write a synthetic multilingual corpus");
    toy_cmd->add_option("--out", ty.out, "Output directory")->required();
    toy_cmd->add_option("--pairs", ty.pairs, "Number of sentence tuples");
    toy_cmd->add_option("--targets", ty.targets, "Target languages")->delimiter(',');
    toy_cmd->add_option("--mv", ty.mv, "Visual tokens per image");
    toy_cmd->add_option("--dv", ty.dv, "Visual token width");
    toy_cmd->add_option("--seed", ty.seed, "Seed");

    std::string hyp, ref;
    bool bleu_lower = false;
    auto* bleu_cmd = app.add_subcommand("bleu", "Corpus BLEU of a hypothesis file against a reference file");
    bleu_cmd->add_option("--hyp", hyp, "Hypotheses, one per line")->required()->check(CLI::ExistingFile);
    bleu_cmd->add_option("--ref", ref, "References, one per line")->required()->check(CLI::ExistingFile);
    bleu_cmd->add_flag("--lowercase", bleu_lower, "Case-insensitive BLEU");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return run_train(train_args);
        if (*translate_cmd) return run_translate(tr);
        if (*eval_cmd) return run_evaluate(ev);
        if (*sweep_cmd) return run_mask_sweep(sw);
        if (*gc_cmd) return run_gradcheck(full_model, gc_seed);
        if (*vtok_cmd) return run_make_vtok(vt);
        if (*bpe_cmd) return run_bpe_train(bp);
        if (*toy_cmd) return run_make_toy(ty);
        if (*bleu_cmd) return run_bleu(hyp, ref, bleu_lower);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
