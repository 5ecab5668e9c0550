#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lvpm3/checkpoint.hpp"
#include "lvpm3/error.hpp"
#include "lvpm3/eval.hpp"
#include "lvpm3/gradcheck_suite.hpp"
#include "lvpm3/toy_corpus.hpp"
#include "lvpm3/train.hpp"

namespace py = pybind11;
using namespace lvpm3;

namespace {

py::array_t<float> to_array(const vision::VisualTokens& v) {
    py::array_t<float> out({v.num_tokens, v.width});
    std::copy(v.values.begin(), v.values.end(), out.mutable_data());
    return out;
}

vision::VisualTokens from_array(const std::string& id, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("visual tokens for '" + id + "' must be a 2-D array [M_v, d_v]");
    vision::VisualTokens v;
    v.image_id = id;
    v.num_tokens = static_cast<std::size_t>(a.shape(0));
    v.width = static_cast<std::size_t>(a.shape(1));
    v.values.assign(a.data(), a.data() + a.size());
    return v;
}

/// A trained checkpoint ready for decoding.
class Translator {
  public:
    explicit Translator(const std::filesystem::path& path) {
        auto ckpt = model::load_checkpoint(path);
        if (!ckpt.has_tokenizer()) throw FormatError("checkpoint " + path.string() + " does not bundle a tokenizer");
        model_.emplace(ckpt.build_model());
        tokenizer_ = ckpt.tokenizer();
    }

    std::string translate(const std::string& sentence, const std::string& tgt_lang,
                          const std::optional<py::array_t<float, py::array::c_style | py::array::forcecast>>& visual,
                          std::size_t beam, double alpha, std::size_t max_len) const {
        const auto source = text::prefix_target_token(tokenizer_.encode(sentence), tgt_lang, tokenizer_.vocab());
        std::optional<vision::VisualTokens> vis;
        if (visual) vis = from_array("input", *visual);
        const eval::BeamOptions opts{beam, alpha, max_len};
        py::gil_scoped_release release;
        return tokenizer_.decode(eval::translate(*model_, source, vis ? &*vis : nullptr, opts).content());
    }

    py::dict evaluate(const std::filesystem::path& manifest_path, const std::string& direction, std::size_t beam,
                      double alpha, bool lowercase) const {
        const auto corpus = text::load_corpus(text::CorpusManifest::load(manifest_path));
        vision::VisualTokenMap visual;
        if (model_->config().uses_vision() && !corpus.manifest.vtok_path.empty()) {
            visual = vision::read_vtok(corpus.manifest.vtok_path);
        }
        eval::EvalOptions opts;
        opts.beam.beam = beam;
        opts.beam.alpha = alpha;
        opts.lowercase = lowercase;
        eval::EvalReport report;
        {
            py::gil_scoped_release release;
            report = eval::evaluate(*model_, tokenizer_, corpus, visual.empty() ? nullptr : &visual, direction, opts);
        }
        py::list hyps;
        for (const auto& s : report.sentences) hyps.append(s.hypothesis);
        py::dict out;
        out["direction"] = report.direction;
        out["bleu"] = report.bleu;
        out["hypotheses"] = hyps;
        return out;
    }

    std::string variant() const { return std::string(model::variant_name(model_->config().variant)); }
    std::string config_json() const { return model_->config().to_json(); }
    const text::BpeTokenizer& tokenizer() const { return tokenizer_; }

  private:
    std::optional<model::Model> model_;
    text::BpeTokenizer tokenizer_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multilingual multimodal translation with language-aware visual prompts";

    // translators are tried newest first, so the base class is registered before its subclasses
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<VocabularyError>(m, "VocabularyError", base);
    py::register_exception<LanguageError>(m, "LanguageError", base);
    py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<VariantError>(m, "VariantError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", base);

    m.def("bleu", &eval::corpus_bleu, py::arg("hypotheses"), py::arg("references"), py::arg("lowercase") = false,
          "Corpus-level unsmoothed 4-gram BLEU on whitespace tokens.");

    m.def(
        "lr_schedule",
        [](std::uint64_t step, double lr_init, double lr_peak, std::uint64_t warmup) {
            return train::lr_schedule(step, {lr_init, lr_peak, warmup});
        },
        py::arg("step"), py::arg("lr_init") = 1e-7, py::arg("lr_peak") = 1e-4, py::arg("warmup_steps") = 2000);

    py::class_<text::BpeTokenizer>(m, "Tokenizer")
        .def_static("load", &text::BpeTokenizer::load, py::arg("prefix"))
        .def("save", &text::BpeTokenizer::save, py::arg("prefix"))
        .def("encode", &text::BpeTokenizer::encode, py::arg("text"))
        .def("decode", &text::BpeTokenizer::decode, py::arg("ids"))
        .def_property_readonly("vocab_size", [](const text::BpeTokenizer& t) { return t.vocab().size(); })
        .def_property_readonly("languages", [](const text::BpeTokenizer& t) { return t.vocab().languages(); })
        .def("tag_id", [](const text::BpeTokenizer& t, const std::string& lang) { return t.vocab().tag_id(lang); });

    m.def(
        "train_bpe",
        [](const std::vector<std::string>& lines, std::size_t vocab_size, const std::vector<std::string>& languages,
           std::size_t min_freq) {
            text::BpeTrainOptions opts;
            opts.vocab_size = vocab_size;
            opts.languages = languages;
            opts.min_freq = min_freq;
            return text::train_bpe(lines, opts);
        },
        py::arg("lines"), py::arg("vocab_size"), py::arg("languages"), py::arg("min_freq") = 2);

    m.def(
        "pseudo_visual_tokens",
        [](const std::string& id, std::size_t mv, std::size_t dv, std::uint64_t seed) {
            return to_array(vision::pseudo_visual_tokens(id, mv, dv, seed));
        },
        py::arg("image_id"), py::arg("num_tokens"), py::arg("width"), py::arg("seed") = 0);

    m.def(
        "read_vtok",
        [](const std::filesystem::path& path) {
            py::dict out;
            for (const auto& [id, v] : vision::read_vtok(path)) out[py::str(id)] = to_array(v);
            return out;
        },
        py::arg("path"), "Reads a VTOK file into {image_id: float32 array [M_v, d_v]}.");

    m.def(
        "write_vtok",
        [](const std::map<std::string, py::array_t<float, py::array::c_style | py::array::forcecast>>& records,
           const std::filesystem::path& path) {
            std::vector<vision::VisualTokens> out;
            for (const auto& [id, a] : records) out.push_back(from_array(id, a));
            vision::write_vtok(out, path);
        },
        py::arg("records"), py::arg("path"));

    m.def(
        "make_toy_corpus",
        [](const std::filesystem::path& out_dir, std::size_t pairs, const std::vector<std::string>& targets,
           std::size_t mv, std::size_t dv, std::uint64_t seed) {
            toy::ToyCorpusOptions opts;
            opts.num_pairs = pairs;
            opts.target_langs = targets;
            opts.seed = seed;
            toy::write_toy_corpus(toy::make_toy_corpus(opts), out_dir, "train", mv, dv, seed);
            return out_dir / "manifest.json";
        },
        py::arg("out_dir"), py::arg("pairs") = 32, py::arg("targets") = std::vector<std::string>{"de", "fr", "cs"},
        py::arg("num_visual") = 4, py::arg("visual_width") = 32, py::arg("seed") = 1,
        "Writes a synthetic corpus and returns the manifest path.");

    m.def(
        "train",
        [](const std::filesystem::path& config, const std::optional<std::filesystem::path>& resume) {
            const auto cfg = train::TrainConfig::load(config);
            train::TrainResult result;
            {
                py::gil_scoped_release release;
                result = train::run_training(cfg, resume);
            }
            std::vector<double> losses;
            for (const auto& l : result.logs) losses.push_back(l.loss);
            py::dict out;
            out["checkpoint"] = result.last_checkpoint;
            out["losses"] = losses;
            return out;
        },
        py::arg("config"), py::arg("resume") = py::none(), "Runs training from a JSON config file.");

    m.def(
        "gradcheck",
        [](bool full_model, std::uint64_t seed) {
            std::vector<ad::SuiteResult> results;
            {
                py::gil_scoped_release release;
                results = ad::run_gradcheck_suite(full_model, seed);
            }
            py::list out;
            for (const auto& r : results) {
                out.append(py::make_tuple(r.name, r.report.passed, r.report.max_rel_error));
            }
            return out;
        },
        py::arg("full_model") = false, py::arg("seed") = 1,
        "Finite-difference suite; returns (name, passed, max_rel_error) tuples.");

    py::class_<Translator>(m, "Translator")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def("translate", &Translator::translate, py::arg("sentence"), py::arg("tgt_lang"),
             py::arg("visual") = py::none(), py::arg("beam") = 5, py::arg("alpha") = 1.0, py::arg("max_len") = 0)
        .def("evaluate", &Translator::evaluate, py::arg("manifest"), py::arg("direction"), py::arg("beam") = 5,
             py::arg("alpha") = 1.0, py::arg("lowercase") = false)
        .def_property_readonly("variant", &Translator::variant)
        .def_property_readonly("config_json", &Translator::config_json)
        .def_property_readonly("tokenizer", &Translator::tokenizer, py::return_value_policy::reference_internal);
}
