#include "lvpm3/gradcheck_suite.hpp"

#include "lvpm3/model.hpp"
#include "lvpm3/ops.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::ad {

namespace {

class Suite {
  public:
    Suite(std::uint64_t seed, const std::function<void(const SuiteResult&)>& on_result)
        : seed_(seed), on_result_(on_result) {}

    Tensor64 random(Shape shape, double lo = -1.0, double hi = 1.0) {
        Rng rng(mix64(seed_, ++counter_));
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = rng.uniform(lo, hi);
        return Tensor64(std::move(shape), std::move(values), true);
    }

    /// Sum of y weighted by fixed random coefficients, so each output entry gets its own
    /// upstream gradient.
    std::function<Tensor64(const Tensor64&)> weighted() {
        auto cache = std::make_shared<std::vector<Tensor64>>();
        const std::uint64_t s = mix64(seed_, ++counter_);
        return [cache, s](const Tensor64& y) {
            if (cache->empty() || cache->front().shape() != y.shape()) {
                Rng rng(s);
                std::vector<double> w(y.numel());
                for (double& v : w) v = rng.uniform(-1.0, 1.0);
                cache->assign(1, Tensor64(y.shape(), std::move(w)));
            }
            return sum(mul(y, cache->front()));
        };
    }

    void check(const std::string& name, const std::function<Tensor64()>& f, const std::vector<GradCheckInput>& inputs,
               const GradCheckOptions& options = {}) {
        SuiteResult r{name, grad_check(f, inputs, options)};
        if (on_result_) on_result_(r);
        results_.push_back(std::move(r));
    }

    std::vector<SuiteResult> take() { return std::move(results_); }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    const std::function<void(const SuiteResult&)>& on_result_;
    std::vector<SuiteResult> results_;
};

void primitives(Suite& s) {
    {
        auto a = s.random({2, 3, 4}), b = s.random({2, 4, 5}), w = s.random({4, 3});
        auto ws = s.weighted();
        s.check("matmul (batched)", [&] { return ws(matmul(a, b)); }, {{"a", a}, {"b", b}});
        auto ws2 = s.weighted();
        s.check("matmul (shared matrix)", [&] { return ws2(matmul(a, w)); }, {{"a", a}, {"w", w}});
    }
    {
        auto a = s.random({2, 3, 4}), b = s.random({2, 5, 4});
        auto ws = s.weighted();
        s.check("matmul_bt", [&] { return ws(matmul_bt(a, b)); }, {{"a", a}, {"b", b}});
    }
    {
        auto a = s.random({2, 3, 4}), b = s.random({3, 4}), c = s.random({2, 3, 4});
        auto ws = s.weighted();
        s.check("add (broadcast)", [&] { return ws(add(a, b)); }, {{"a", a}, {"b", b}});
        auto ws2 = s.weighted();
        s.check("mul", [&] { return ws2(mul(a, c)); }, {{"a", a}, {"c", c}});
        auto ws3 = s.weighted();
        s.check("scale", [&] { return ws3(scale(a, 0.37)); }, {{"a", a}});
        auto ws4 = s.weighted();
        s.check("relu", [&] { return ws4(relu(a)); }, {{"a", a}});
    }
    {
        auto x = s.random({2, 3, 5}, -2.0, 2.0);
        auto ws = s.weighted();
        s.check("softmax (last axis)", [&] { return ws(softmax(x, 2)); }, {{"x", x}});
        auto ws2 = s.weighted();
        s.check("softmax (middle axis)", [&] { return ws2(softmax(x, 1)); }, {{"x", x}});
    }
    {
        auto x = s.random({3, 6}), g = s.random({6}), b = s.random({6});
        auto ws = s.weighted();
        s.check("layer_norm", [&] { return ws(layer_norm(x, g, b)); }, {{"x", x}, {"gain", g}, {"bias", b}});
    }
    {
        auto table = s.random({6, 4});
        const std::vector<TokenId> ids{1, 3, 1, 5, 0};
        auto ws = s.weighted();
        s.check("embedding_lookup", [&] { return ws(embedding_lookup(table, std::span<const TokenId>(ids))); },
                {{"table", table}});
    }
    {
        auto x = s.random({2, 3, 4}), y = s.random({2, 2, 4});
        auto ws = s.weighted();
        s.check("concat", [&] { return ws(concat<double>({x, y}, 1)); }, {{"x", x}, {"y", y}});
        auto ws2 = s.weighted();
        s.check("transpose", [&] { return ws2(transpose(x)); }, {{"x", x}});
        auto ws3 = s.weighted();
        s.check("reshape", [&] { return ws3(reshape(x, {3, 8})); }, {{"x", x}});
        auto ws4 = s.weighted();
        s.check("permute", [&] { return ws4(permute(x, {1, 2, 0})); }, {{"x", x}});
        auto ws5 = s.weighted();
        s.check("slice_last", [&] { return ws5(slice_last(x, 1, 2)); }, {{"x", x}});
        s.check("mean", [&] { return mean(mul(x, x)); }, {{"x", x}});
    }
    {
        auto x = s.random({2, 3, 4}), w = s.random({4, 5}), b = s.random({5}), bias = s.random({2, 4});
        auto ws = s.weighted();
        s.check("linear_with_external_params", [&] { return ws(linear_with_external_params(x, w, b)); },
                {{"x", x}, {"weight", w}, {"bias", b}});
        auto ws2 = s.weighted();
        s.check("add_batch_bias", [&] { return ws2(add_batch_bias(x, bias)); }, {{"x", x}, {"bias", bias}});
    }
    {
        auto logits = s.random({5, 7}, -2.0, 2.0);
        const std::vector<TokenId> targets{3, 0, 6, 2, 0};
        s.check("cross_entropy_label_smoothed",
                [&] { return cross_entropy_label_smoothed(logits, std::span<const TokenId>(targets), 0.1, 0); },
                {{"logits", logits}});
    }
    {
        auto x = s.random({3, 8});
        auto ws = s.weighted();
        s.check("dropout (fixed mask)",
                [&] {
                    Rng rng(5);
                    return ws(dropout(x, 0.3, rng));
                },
                {{"x", x}});
    }
    {
        auto scores = s.random({1, 2, 3, 4}, -2.0, 2.0);
        const std::vector<std::uint8_t> allowed{1, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1};
        auto ws = s.weighted();
        s.check("attention_mask + softmax",
                [&] { return ws(softmax(attention_mask(scores, std::span<const std::uint8_t>(allowed)), 3)); },
                {{"scores", scores}});
    }
}

void full_models(Suite& s, std::uint64_t seed) {
    // ids: 0-4 reserved, 5-7 language tags, 8-15 content
    const std::vector<vision::VisualTokens> images{vision::pseudo_visual_tokens("a", 3, 4, seed),
                                                   vision::pseudo_visual_tokens("b", 3, 4, seed)};
    for (auto variant : {model::Variant::full, model::Variant::no_lvpg, model::Variant::static_map,
                         model::Variant::text_only}) {
        model::ModelConfig cfg;
        cfg.vocab_size = 16;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.n_enc_layers = 1;
        cfg.n_dec_layers = 1;
        cfg.d_ffn = 16;
        cfg.d_v = 4;
        cfg.variant = variant;
        model::Model64 m(cfg, seed);
        std::vector<const vision::VisualTokens*> vis;
        if (cfg.uses_vision()) vis = {&images[0], &images[1]};
        const auto batch = model::make_batch({{5, 1, 8, 9, 10, 2}, {6, 1, 11, 2}}, {{12, 13, 2}, {14, 2}}, vis);
        std::vector<GradCheckInput> inputs;
        for (const auto& [name, t] : m.parameters()) inputs.push_back({name, t});
        GradCheckOptions opts;
        opts.seed = seed;
        opts.max_entries_per_input = variant == model::Variant::full ? 0 : 12;
        s.check("model loss (" + std::string(model::variant_name(variant)) + ")", [&] { return m.forward_loss(batch); },
                inputs, opts);
    }
}

} // namespace

std::vector<SuiteResult> run_gradcheck_suite(bool full_model, std::uint64_t seed,
                                             const std::function<void(const SuiteResult&)>& on_result) {
    Suite suite(seed, on_result);
    primitives(suite);
    if (full_model) full_models(suite, seed);
    return suite.take();
}

} // namespace lvpm3::ad
