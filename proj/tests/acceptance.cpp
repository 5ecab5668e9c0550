// End-to-end acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [output_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lvpm3/checkpoint.hpp"
#include "lvpm3/error.hpp"
#include "lvpm3/eval.hpp"
#include "lvpm3/gradcheck_suite.hpp"
#include "lvpm3/toy_corpus.hpp"
#include "lvpm3/train.hpp"

using namespace lvpm3;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// ---- shared overfit setup ----

constexpr std::size_t kOverfitMaxSteps = 500;
constexpr double kOverfitLoss = 0.1;
const std::vector<std::string> kDirections{"en-de", "en-fr", "en-cs"};

struct OverfitData {
    text::CorpusManifest manifest;
    text::ParallelCorpus corpus;
    text::BpeTokenizer tokenizer;
    vision::VisualTokenMap visual;
    std::vector<text::ParallelExample> examples;
};

OverfitData make_overfit_data(const std::filesystem::path& dir) {
    OverfitData d;
    toy::ToyCorpusOptions opts; // 32 pairs, en -> {de, fr, cs}
    d.manifest = toy::write_toy_corpus(toy::make_toy_corpus(opts), dir, "train", 4, 32, 7);
    d.corpus = text::load_corpus(d.manifest);
    std::vector<std::string> lines;
    for (const auto& [lang, l] : d.corpus.lines) lines.insert(lines.end(), l.begin(), l.end());
    text::BpeTrainOptions bpe;
    bpe.vocab_size = 400;
    bpe.languages = d.manifest.languages;
    d.tokenizer = text::train_bpe(lines, bpe);
    d.visual = vision::read_vtok(d.manifest.vtok_path);
    d.examples = text::build_examples(d.corpus, d.tokenizer);
    return d;
}

/// Desk-scale overfit configuration: d_model 64, 2+2 layers, 4 heads. Regularization is
/// off because the target is memorization (with label smoothing 0.1 the loss cannot fall
/// below the entropy of the smoothed target, far above 0.1).
model::ModelConfig overfit_model_config(const OverfitData& d, model::Variant variant) {
    model::ModelConfig c;
    c.vocab_size = d.tokenizer.vocab().size();
    c.d_model = 64;
    c.n_heads = 4;
    c.n_enc_layers = 2;
    c.n_dec_layers = 2;
    c.d_v = 32;
    c.dropout = 0.0;
    c.eps_ls = 0.0;
    c.variant = variant;
    return c;
}

train::TrainConfig overfit_train_config() {
    train::TrainConfig c;
    c.schedule = {1e-7, 2e-3, 50};
    c.max_tokens = 4096;
    c.seed = 1;
    return c;
}

struct OverfitRun {
    model::Model model;
    std::size_t steps = 0;
    double final_loss = 0.0;
    double seconds = 0.0;
};

OverfitRun overfit(const OverfitData& d, model::Variant variant) {
    const auto start = Clock::now();
    OverfitRun run{model::Model(overfit_model_config(d, variant), 1)};
    train::Trainer trainer(run.model, d.examples, &d.visual, overfit_train_config());
    while (run.steps < kOverfitMaxSteps) {
        run.final_loss = trainer.step().loss;
        ++run.steps;
        if (run.final_loss < kOverfitLoss) break;
    }
    run.seconds = seconds_since(start);
    return run;
}

std::vector<double> train_bleu(const OverfitData& d, const model::Model& m) {
    std::vector<double> out;
    for (const auto& dir : kDirections) out.push_back(eval::evaluate(m, d.tokenizer, d.corpus, &d.visual, dir).bleu);
    return out;
}

// ---- criteria ----

Outcome gradient_integrity() {
    const auto start = Clock::now();
    bool ok = true;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    bool controller_path = false;
    for (const auto& r : ad::run_gradcheck_suite(true, 1)) {
        ok &= r.report.passed;
        ++checks;
        controller_path |= r.name == "model loss (full)" && r.report.entries_checked > 0;
        if (r.report.max_rel_error > worst) {
            worst = r.report.max_rel_error;
            worst_name = r.name + " " + r.report.worst_entry;
        }
    }
    const double secs = seconds_since(start);
    return {ok && controller_path && secs < 60.0,
            fmt("%zu checks, worst rel err %.2e (%s), %.1f s", checks, worst, worst_name.c_str(), secs)};
}

Outcome overfit_oracle(const OverfitData& d, const OverfitRun& run, const std::vector<double>& bleu) {
    const bool bleu_ok = std::all_of(bleu.begin(), bleu.end(), [](double b) { return b > 95.0; });
    return {run.final_loss < kOverfitLoss && bleu_ok && run.seconds < 300.0,
            fmt("%zu examples, loss %.4f after %zu steps (%.0f s); train BLEU de %.1f fr %.1f cs %.1f",
                d.examples.size(), run.final_loss, run.steps, run.seconds, bleu[0], bleu[1], bleu[2])};
}

Outcome lvpg_conditioning(const OverfitData& d, const OverfitRun& full, const std::vector<double>& full_bleu,
                          const OverfitRun& stat, const std::vector<double>& static_bleu) {
    const auto& vocab = d.tokenizer.vocab();
    const std::vector<text::TokenId> tags{vocab.tag_id("de"), vocab.tag_id("fr")};
    ad::NoGradGuard no_grad;
    const auto theta = full.model.controller_forward(tags);
    const std::size_t w = theta.weight.numel() / 2, b = theta.bias.numel() / 2;
    double diff = 0.0;
    for (std::size_t i = 0; i < w; ++i) diff = std::max(diff, double(std::abs(theta.weight.data()[i] - theta.weight.data()[w + i])));
    for (std::size_t i = 0; i < b; ++i) diff = std::max(diff, double(std::abs(theta.bias.data()[i] - theta.bias.data()[b + i])));

    // same image and source, different target tags
    const auto& image = d.visual.at(d.corpus.image_ids[0]);
    const auto src = d.tokenizer.encode(d.corpus.lines.at("en")[0]);
    const auto batch = model::make_batch({text::prefix_target_token(src, "de", vocab), text::prefix_target_token(src, "fr", vocab)},
                                         {{text::kEos}, {text::kEos}}, {&image, &image});
    const auto prompts = stat.model.make_prompts(batch);
    const std::size_t half = prompts.numel() / 2;
    const bool identical = std::equal(prompts.data().begin(), prompts.data().begin() + half, prompts.data().begin() + half);

    double full_mean = 0, static_mean = 0;
    for (std::size_t i = 0; i < full_bleu.size(); ++i) {
        full_mean += full_bleu[i] / full_bleu.size();
        static_mean += static_bleu[i] / static_bleu.size();
    }
    return {diff > 1e-6 && identical && full_mean >= static_mean,
            fmt("max |theta(de) - theta(fr)| = %.3e; static prompts bitwise identical: %s; "
                "train BLEU full %.2f vs static %.2f (static: loss %.4f after %zu steps)",
                diff, identical ? "yes" : "no", full_mean, static_mean, stat.final_loss, stat.steps)};
}

Outcome beam_oracle() {
    std::size_t matches = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        model::ModelConfig c;
        c.vocab_size = 8;
        c.d_model = 8;
        c.n_heads = 2;
        c.n_enc_layers = 1;
        c.n_dec_layers = 1;
        c.variant = model::Variant::text_only;
        const model::Model m(c, seed);
        // ids 0-4 reserved, 5-7 ordinary; the first token plays the role of a tag
        const std::vector<text::TokenId> source{5, text::kBos, 6, 7, 7, text::kEos};
        const auto scorer = eval::model_scorer(m, source, nullptr);
        const auto beam = eval::beam_search(scorer, 4, 4096, 1.0);
        const auto oracle = eval::exhaustive_search(scorer, 8, 4, 1.0);
        matches += beam.tokens == oracle.tokens;
    }
    return {matches == 20, fmt("%zu/20 seeds: beam 4096 equals the exhaustive argmax", matches)};
}

Outcome bleu_oracle() {
    struct Case {
        std::vector<std::string> hyp, ref;
        double expected;
    };
    const std::vector<Case> cases{
        {{"the cat sat on the mat today", "a dog runs in the park"},
         {"the cat sat on a mat today", "a dog runs through the big park"},
         35.65249133455411},
        {{"the the the the cat the cat sat down", "he said that he said it"},
         {"the cat sat down on the rug", "he said that it was he who said it"},
         29.77116848926267},
        {{"the quick brown fox jumps over the dog", "a small boy plays with a red ball"},
         {"the quick brown fox jumps over the lazy dog today", "a small boy plays with a big red ball in the park"},
         56.29148396230506},
    };
    bool ok = true;
    std::string detail;
    for (const auto& c : cases) {
        const double got = eval::corpus_bleu(c.hyp, c.ref);
        ok &= std::abs(got - c.expected) < 1e-6;
        detail += fmt("%.6f/%.6f ", got, c.expected);
    }
    const double self = eval::corpus_bleu(cases[0].ref, cases[0].ref);
    const double disjoint = eval::corpus_bleu({"alpha beta gamma delta epsilon"}, {"one two three four five"});
    ok &= self == 100.0 && disjoint == 0.0;
    return {ok, detail + fmt("self %.1f disjoint %.1f", self, disjoint)};
}

Outcome masking_trend(const OverfitData& d, const model::Model& m, const std::filesystem::path& out_dir) {
    const std::vector<double> ratios{0.0, 0.2, 0.4, 0.6, 0.8};
    bool ok = true;
    std::string detail;
    for (const auto& dir : kDirections) {
        const auto rows = eval::mask_sweep(m, d.tokenizer, d.corpus, &d.visual, dir, ratios, {1, 2, 3});
        const auto csv = out_dir / ("mask_sweep_" + dir + ".csv");
        eval::write_sweep_csv(csv, dir, rows);
        ok &= rows.front().mean_bleu >= rows.back().mean_bleu && std::filesystem::exists(csv);
        detail += fmt("%s:", dir.c_str());
        for (const auto& r : rows) detail += fmt(" %.1f", r.mean_bleu);
        detail += "; ";
    }
    return {ok, detail + "CSV in " + out_dir.string()};
}

Outcome schedule_and_optimizer() {
    const double lr1 = train::lr_schedule(1), lr2000 = train::lr_schedule(2000), lr8000 = train::lr_schedule(8000);
    bool ok = std::abs(lr1 - 1e-7) < 1e-12 && lr2000 == 1e-4 && std::abs(lr8000 - 5e-5) < 1e-15;

    ad::Tensor p({3}, {0.5f, -0.25f, 1.5f}, true);
    train::Adam adam({{"p", p}});
    const std::vector<float> g{0.8f, -0.003f, 2.5f};
    p.impl().grad = g;
    const double lr = 1e-3;
    adam.step(lr);
    const std::vector<double> start{0.5, -0.25, 1.5};
    double err = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        // first step: m_hat = g, v_hat = g^2
        const double expected = start[i] - lr * g[i] / (std::abs(double(g[i])) + 1e-8);
        err = std::max(err, std::abs(p.data()[i] - expected));
    }
    ok &= err < 1e-6;
    return {ok, fmt("lr(1) = %.3e, lr(2000) = %.3e, lr(8000) = %.3e; Adam first-step max err %.2e", lr1, lr2000, lr8000,
                    err)};
}

Outcome format_round_trips(const std::filesystem::path& dir) {
    bool ok = true;
    std::string detail;
    // VTOK
    std::vector<vision::VisualTokens> records;
    for (int i = 0; i < 5; ++i) records.push_back(vision::pseudo_visual_tokens("img" + std::to_string(i), 4, 32, 3));
    vision::write_vtok(records, dir / "roundtrip.vtok");
    const auto back = vision::read_vtok(dir / "roundtrip.vtok");
    bool vtok_ok = back.size() == records.size();
    for (const auto& r : records) vtok_ok &= back.count(r.image_id) && back.at(r.image_id) == r;
    ok &= vtok_ok;
    detail += std::string("VTOK ") + (vtok_ok ? "bit-exact" : "MISMATCH");

    // checkpoint with tokenizer and optimizer state
    toy::ToyCorpusOptions topts;
    topts.num_pairs = 6;
    const auto manifest = toy::write_toy_corpus(toy::make_toy_corpus(topts), dir / "ckpt_corpus", "train", 2, 8, 1);
    const auto corpus = text::load_corpus(manifest);
    std::vector<std::string> lines;
    for (const auto& [lang, l] : corpus.lines) lines.insert(lines.end(), l.begin(), l.end());
    text::BpeTrainOptions bpe;
    bpe.vocab_size = 300;
    bpe.languages = manifest.languages;
    const auto tok = text::train_bpe(lines, bpe);
    model::ModelConfig c;
    c.vocab_size = tok.vocab().size();
    c.d_model = 16;
    c.n_heads = 2;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.d_v = 8;
    model::Model m(c, 4);
    const auto visual = vision::read_vtok(manifest.vtok_path);
    train::Trainer trainer(m, text::build_examples(corpus, tok), &visual, train::TrainConfig{});
    trainer.step();
    const auto snap = trainer.snapshot();
    const auto ckpt = model::make_checkpoint(m, &tok, &snap);
    model::save_checkpoint(ckpt, dir / "roundtrip.lvpm");
    const auto loaded = model::load_checkpoint(dir / "roundtrip.lvpm");
    bool ckpt_ok = model::encode_checkpoint(loaded) == model::encode_checkpoint(ckpt) && loaded.config == c &&
                   loaded.train && *loaded.train == snap;
    for (std::size_t i = 0; ckpt_ok && i < ckpt.parameters.size(); ++i) {
        ckpt_ok &= std::memcmp(loaded.parameters[i].values.data(), ckpt.parameters[i].values.data(),
                               ckpt.parameters[i].values.size() * sizeof(float)) == 0;
    }
    ok &= ckpt_ok;
    detail += std::string(", checkpoint ") + (ckpt_ok ? "bit-exact" : "MISMATCH");

    // misaligned manifest
    {
        std::ofstream short_file(dir / "ckpt_corpus" / "de.txt", std::ios::trunc);
        for (std::size_t i = 0; i + 1 < corpus.size(); ++i) short_file << corpus.lines.at("de")[i] << '\n';
    }
    bool rejected = false;
    try {
        text::load_corpus(text::CorpusManifest::load(dir / "ckpt_corpus" / "manifest.json"));
    } catch (const FormatError& e) {
        rejected = true;
        detail += fmt(", misaligned corpus rejected (%s)", e.what());
    }
    ok &= rejected;
    if (!rejected) detail += ", misaligned corpus ACCEPTED";
    return {ok, detail};
}

Outcome variant_matrix(const std::filesystem::path& dir) {
    toy::ToyCorpusOptions topts;
    topts.num_pairs = 6;
    const auto manifest = toy::write_toy_corpus(toy::make_toy_corpus(topts), dir / "variant_corpus", "train", 3, 8, 2);
    const auto corpus = text::load_corpus(manifest);
    std::vector<std::string> lines;
    for (const auto& [lang, l] : corpus.lines) lines.insert(lines.end(), l.begin(), l.end());
    text::BpeTrainOptions bpe;
    bpe.vocab_size = 300;
    bpe.languages = manifest.languages;
    const auto tok = text::train_bpe(lines, bpe);
    const auto visual = vision::read_vtok(manifest.vtok_path);
    const auto examples = text::build_examples(corpus, tok);
    bool ok = true;
    std::string detail;
    for (auto v : {model::Variant::full, model::Variant::no_lvpg, model::Variant::static_map, model::Variant::text_only}) {
        try {
            model::ModelConfig c;
            c.vocab_size = tok.vocab().size();
            c.d_model = 16;
            c.n_heads = 2;
            c.n_enc_layers = 1;
            c.n_dec_layers = 1;
            c.d_v = 8;
            c.variant = v;
            model::Model m(c, 5);
            const auto* vis_map = c.uses_vision() ? &visual : nullptr;
            train::Trainer trainer(m, examples, vis_map, train::TrainConfig{});
            const double loss = trainer.step().loss;
            const auto& ex = examples.front();
            const auto hyp = eval::translate(m, ex.source_ids, c.uses_vision() ? &visual.at(ex.image_id) : nullptr, {});
            const bool good = std::isfinite(loss) && hyp.tokens.back() == text::kEos;
            ok &= good;
            detail += fmt("%s: loss %.3f, %zu tokens; ", model::variant_name(v).data(), loss, hyp.content().size());
        } catch (const std::exception& e) {
            ok = false;
            detail += fmt("%s: ERROR %s; ", model::variant_name(v).data(), e.what());
        }
    }
    return {ok, detail};
}

} // namespace

int main(int argc, char** argv) {
    const std::filesystem::path out_dir = argc > 1 ? argv[1] : "acceptance_out";
    std::filesystem::remove_all(out_dir);
    std::filesystem::create_directories(out_dir);

    int failures = 0;
    auto report = [&](int id, const char* title, const std::function<Outcome()>& run) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.passed;
        std::printf("%s criterion %d (%s): %s\n", o.passed ? "PASS" : "FAIL", id, title, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "gradient integrity", gradient_integrity);

    std::optional<OverfitData> data;
    std::optional<OverfitRun> full, stat;
    std::vector<double> full_bleu, static_bleu;
    report(2, "overfit oracle", [&] {
        const auto start = Clock::now();
        data = make_overfit_data(out_dir / "overfit_corpus");
        full = overfit(*data, model::Variant::full);
        full_bleu = train_bleu(*data, full->model);
        full->seconds = seconds_since(start);
        return overfit_oracle(*data, *full, full_bleu);
    });
    report(3, "language-aware prompt conditioning", [&] {
        if (!full) return Outcome{false, "overfit model unavailable"};
        stat = overfit(*data, model::Variant::static_map);
        static_bleu = train_bleu(*data, stat->model);
        return lvpg_conditioning(*data, *full, full_bleu, *stat, static_bleu);
    });
    report(4, "beam-search oracle", beam_oracle);
    report(5, "BLEU oracle", bleu_oracle);
    report(6, "masking trend", [&] {
        if (!full) return Outcome{false, "overfit model unavailable"};
        return masking_trend(*data, full->model, out_dir);
    });
    report(7, "schedule and optimizer", schedule_and_optimizer);
    report(8, "format round trips", [&] { return format_round_trips(out_dir); });
    report(9, "variant matrix", [&] { return variant_matrix(out_dir); });

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
