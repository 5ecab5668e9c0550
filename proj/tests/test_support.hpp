#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lvpm3/batching.hpp"
#include "lvpm3/bpe.hpp"
#include "lvpm3/corpus.hpp"
#include "lvpm3/model.hpp"
#include "lvpm3/toy_corpus.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lvpm3_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Small synthetic corpus on disk with a tokenizer trained on it.
struct ToyData {
    std::filesystem::path dir;
    text::CorpusManifest manifest;
    text::ParallelCorpus corpus;
    text::BpeTokenizer tokenizer;
    vision::VisualTokenMap visual;
    std::vector<text::ParallelExample> examples;

    ToyData(const std::string& name, std::size_t num_pairs, std::vector<std::string> targets = {"de", "fr"},
            std::size_t num_visual = 3, std::size_t visual_width = 8) {
        dir = fresh_dir(name);
        toy::ToyCorpusOptions opts;
        opts.num_pairs = num_pairs;
        opts.target_langs = std::move(targets);
        const auto toy_corpus = toy::make_toy_corpus(opts);
        manifest = toy::write_toy_corpus(toy_corpus, dir, "train", num_visual, visual_width, 7);
        corpus = text::load_corpus(manifest);
        std::vector<std::string> lines;
        for (const auto& [lang, l] : corpus.lines) lines.insert(lines.end(), l.begin(), l.end());
        text::BpeTrainOptions bpe;
        bpe.vocab_size = 400;
        bpe.languages = manifest.languages;
        tokenizer = text::train_bpe(lines, bpe);
        visual = vision::read_vtok(manifest.vtok_path);
        examples = text::build_examples(corpus, tokenizer);
    }

    model::ModelConfig model_config(model::Variant variant, std::size_t d_model = 16) const {
        model::ModelConfig c;
        c.vocab_size = tokenizer.vocab().size();
        c.d_model = d_model;
        c.n_heads = 2;
        c.n_enc_layers = 1;
        c.n_dec_layers = 1;
        c.d_v = visual.begin()->second.width;
        c.variant = variant;
        return c;
    }
};

} // namespace lvpm3::testing
