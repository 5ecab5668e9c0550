#include "lvpm3/model.hpp"

#include <cmath>

#include "lvpm3/error.hpp"

namespace lvpm3::model {

using ad::Shape;

template <typename T>
ad::BasicTensor<T> sinusoidal_positions(std::size_t len, std::size_t d) {
    std::vector<T> values(len * d);
    for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) * freq;
            values[pos * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return ad::BasicTensor<T>({len, d}, std::move(values));
}

std::vector<std::uint8_t> key_padding_mask(std::span<const TokenId> keys, std::size_t batch,
                                           std::size_t key_len, std::size_t query_len) {
    if (keys.size() != batch * key_len) {
        throw ShapeError("key padding mask: " + std::to_string(keys.size()) + " ids for " +
                         std::to_string(batch) + "x" + std::to_string(key_len));
    }
    std::vector<std::uint8_t> allowed(batch * query_len * key_len);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t q = 0; q < query_len; ++q) {
            for (std::size_t k = 0; k < key_len; ++k) {
                allowed[(b * query_len + q) * key_len + k] = keys[b * key_len + k] != text::kPad;
            }
        }
    }
    return allowed;
}

std::vector<std::uint8_t> causal_mask(std::span<const TokenId> ids, std::size_t batch, std::size_t len) {
    auto allowed = key_padding_mask(ids, batch, len, len);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t q = 0; q < len; ++q) {
            for (std::size_t k = q + 1; k < len; ++k) allowed[(b * len + q) * len + k] = 0;
        }
    }
    return allowed;
}

namespace {

template <typename T>
std::vector<T> uniform_values(std::size_t n, double limit, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
    return v;
}

/// Rectangular identity [rows, cols] flattened row-major.
template <typename T>
std::vector<T> eye(std::size_t rows, std::size_t cols) {
    std::vector<T> v(rows * cols, T(0));
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) v[i * cols + i] = T(1);
    return v;
}

std::string block_name(const std::string& prefix, std::size_t i) { return prefix + "." + std::to_string(i); }

} // namespace

template <typename T>
LvpM3Model<T>::LvpM3Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.d_model;

    auto emb = uniform_values<T>(config_.vocab_size * d, std::sqrt(3.0 / static_cast<double>(d)), rng);
    std::fill(emb.begin(), emb.begin() + static_cast<std::ptrdiff_t>(d), T(0)); // PAD row
    embedding_ = add_param("embedding", {config_.vocab_size, d}, std::move(emb));

    for (std::size_t i = 0; i < config_.n_enc_layers; ++i) encoder_.push_back(make_block(block_name("encoder", i), rng));

    if (config_.variant == Variant::full) {
        const std::size_t h = config_.controller_width();
        const std::size_t out = config_.controller_output();
        ctrl_fc1_ = make_linear("controller.fc1", d, h, rng);
        // Near-zero output layer; its bias starts the generated map at a rectangular identity.
        ctrl_fc2_.weight = add_param("controller.fc2.weight", {h, out},
                                     uniform_values<T>(h * out, 1e-2 / std::sqrt(static_cast<double>(h)), rng));
        auto bias = eye<T>(config_.d_v, d);
        bias.resize(out, T(0));
        ctrl_fc2_.bias = add_param("controller.fc2.bias", {out}, std::move(bias));
    } else if (config_.variant == Variant::static_map) {
        static_map_.weight = add_param("static_map.weight", {config_.d_v, d}, eye<T>(config_.d_v, d));
        static_map_.bias = add_param("static_map.bias", {d}, std::vector<T>(d, T(0)));
    } else if (config_.variant == Variant::no_lvpg) {
        visual_proj_ = make_linear("visual_proj", config_.d_v, d, rng, false);
    }

    if (config_.uses_vision()) {
        text_fuse_ = make_block("text_fuse", rng);
        if (config_.variant != Variant::no_lvpg) prompt_fuse_ = make_block("prompt_fuse", rng);
        for (std::size_t i = 0; i < config_.n_coattn_layers; ++i) coattn_.push_back(make_block(block_name("coattn", i), rng));
    }

    for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
        const std::string name = block_name("decoder", i);
        DecoderBlock blk;
        blk.self_attn = make_attention(name + ".self_attn", rng);
        blk.norm1 = make_norm(name + ".norm1");
        blk.cross_attn = make_attention(name + ".cross_attn", rng);
        blk.norm2 = make_norm(name + ".norm2");
        blk.ffn = make_ffn(name + ".ffn", rng);
        blk.norm3 = make_norm(name + ".norm3");
        decoder_.push_back(std::move(blk));
    }
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::add_param(const std::string& name, Shape shape,
                                                         std::vector<T> values) {
    Tensor t(std::move(shape), std::move(values), true);
    params_.emplace_back(name, t);
    return t;
}

template <typename T>
typename LvpM3Model<T>::Linear LvpM3Model<T>::make_linear(const std::string& name, std::size_t in,
                                                          std::size_t out, Rng& rng, bool with_bias) {
    Linear l;
    l.weight = add_param(name + ".weight", {in, out},
                         uniform_values<T>(in * out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (with_bias) l.bias = add_param(name + ".bias", {out}, std::vector<T>(out, T(0)));
    return l;
}

template <typename T>
typename LvpM3Model<T>::Norm LvpM3Model<T>::make_norm(const std::string& name) {
    const std::size_t d = config_.d_model;
    return Norm{add_param(name + ".gain", {d}, std::vector<T>(d, T(1))),
                add_param(name + ".bias", {d}, std::vector<T>(d, T(0)))};
}

template <typename T>
typename LvpM3Model<T>::Attention LvpM3Model<T>::make_attention(const std::string& name, Rng& rng) {
    const std::size_t d = config_.d_model;
    Attention a;
    a.q = make_linear(name + ".q", d, d, rng);
    a.k = make_linear(name + ".k", d, d, rng);
    a.v = make_linear(name + ".v", d, d, rng);
    a.o = make_linear(name + ".o", d, d, rng);
    return a;
}

template <typename T>
typename LvpM3Model<T>::FeedForward LvpM3Model<T>::make_ffn(const std::string& name, Rng& rng) {
    FeedForward f;
    f.in = make_linear(name + ".in", config_.d_model, config_.ffn_width(), rng);
    f.out = make_linear(name + ".out", config_.ffn_width(), config_.d_model, rng);
    return f;
}

template <typename T>
typename LvpM3Model<T>::Block LvpM3Model<T>::make_block(const std::string& name, Rng& rng) {
    Block b;
    b.attn = make_attention(name + ".attn", rng);
    b.norm1 = make_norm(name + ".norm1");
    b.ffn = make_ffn(name + ".ffn", rng);
    b.norm2 = make_norm(name + ".norm2");
    return b;
}

template <typename T>
typename LvpM3Model<T>::Tensor& LvpM3Model<T>::parameter(const std::string& name) {
    for (auto& [n, t] : params_) {
        if (n == name) return t;
    }
    throw ConfigError("model has no parameter named '" + name + "'");
}

template <typename T>
const typename LvpM3Model<T>::Tensor& LvpM3Model<T>::parameter(const std::string& name) const {
    return const_cast<LvpM3Model*>(this)->parameter(name);
}

template <typename T>
bool LvpM3Model<T>::has_parameter(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.first == name) return true;
    }
    return false;
}

template <typename T>
std::size_t LvpM3Model<T>::num_weights() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.second.numel();
    return n;
}

template <typename T>
void LvpM3Model<T>::zero_grad() {
    for (auto& p : params_) p.second.zero_grad();
}

// ---- building blocks ----

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::embed(std::span<const TokenId> ids, std::size_t batch,
                                                    std::size_t len, Context& ctx) const {
    if (len == 0 || batch == 0) throw ShapeError("cannot embed an empty sequence");
    if (ids.size() != batch * len) {
        throw ShapeError("embed: " + std::to_string(ids.size()) + " ids for a " + std::to_string(batch) +
                         "x" + std::to_string(len) + " batch");
    }
    const std::size_t d = config_.d_model;
    Tensor x = ad::embedding_lookup(embedding_, ids);
    x = ad::scale(x, static_cast<T>(std::sqrt(static_cast<double>(d))));
    x = ad::reshape(x, {batch, len, d});
    x = ad::add(x, sinusoidal_positions<T>(len, d));
    if (ctx.training && config_.dropout > 0) x = ad::dropout(x, config_.dropout, ctx.rng);
    return x;
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::linear(const Tensor& x, const Linear& l) const {
    Tensor y = ad::matmul(x, l.weight);
    return l.bias.numel() ? ad::add(y, l.bias) : y;
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::attention(const Attention& a, const Tensor& query,
                                                        const Tensor& kv,
                                                        std::span<const std::uint8_t> allowed,
                                                        Context& ctx) const {
    const std::size_t batch = query.dim(0), tq = query.dim(1), tk = kv.dim(1);
    const std::size_t heads = config_.n_heads, d = config_.d_model, c = d / heads;
    if (kv.dim(0) != batch) {
        throw ShapeError("attention: query batch " + std::to_string(batch) + " vs key batch " +
                         std::to_string(kv.dim(0)));
    }
    auto split = [&](const Tensor& x, std::size_t t) {
        return ad::permute(ad::reshape(x, {batch, t, heads, c}), {0, 2, 1, 3});
    };
    const Tensor q = split(linear(query, a.q), tq);
    const Tensor k = split(linear(kv, a.k), tk);
    const Tensor v = split(linear(kv, a.v), tk);
    Tensor scores = ad::scale(ad::matmul_bt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))));
    if (!allowed.empty()) scores = ad::attention_mask(scores, allowed);
    const Tensor weights = ad::softmax(scores, 3);
    if (ctx.trace) ctx.trace->attention.push_back(weights);
    Tensor out = ad::permute(ad::matmul(weights, v), {0, 2, 1, 3});
    return linear(ad::reshape(out, {batch, tq, d}), a.o);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::feed_forward(const FeedForward& f, const Tensor& x) const {
    return linear(ad::relu(linear(x, f.in)), f.out);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::residual_norm(const Tensor& x, const Tensor& branch,
                                                            const Norm& n, Context& ctx) const {
    Tensor b = branch;
    if (ctx.training && config_.dropout > 0) b = ad::dropout(b, config_.dropout, ctx.rng);
    return ad::layer_norm(ad::add(x, b), n.gain, n.bias);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::run_block(const Block& blk, const Tensor& query,
                                                        const Tensor& kv,
                                                        std::span<const std::uint8_t> allowed,
                                                        Context& ctx, Tensor* context_out) const {
    const Tensor a = attention(blk.attn, query, kv, allowed, ctx);
    if (context_out) *context_out = a;
    const Tensor x = residual_norm(query, a, blk.norm1, ctx);
    return residual_norm(x, feed_forward(blk.ffn, x), blk.norm2, ctx);
}

// ---- public operations ----

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::encode_source(std::span<const TokenId> source,
                                                            std::size_t batch, std::size_t len,
                                                            Context* ctx) const {
    Context local;
    Context& c = ctx ? *ctx : local;
    Tensor x = embed(source, batch, len, c);
    const auto mask = key_padding_mask(source, batch, len, len);
    for (const auto& blk : encoder_) x = run_block(blk, x, x, mask, c);
    if (c.trace) c.trace->source_states = x;
    return x;
}

template <typename T>
typename LvpM3Model<T>::Theta LvpM3Model<T>::controller_forward(std::span<const TokenId> tags,
                                                                Context* ctx) const {
    if (config_.variant != Variant::full) {
        throw VariantError("the controller only exists in the full variant (this model is " +
                           std::string(variant_name(config_.variant)) + ")");
    }
    if (tags.empty()) throw ShapeError("controller_forward needs at least one tag");
    const std::size_t batch = tags.size(), d = config_.d_model, dv = config_.d_v;
    Tensor t = ad::scale(ad::embedding_lookup(embedding_, tags), static_cast<T>(std::sqrt(static_cast<double>(d))));
    const Tensor flat = linear(ad::relu(linear(t, ctrl_fc1_)), ctrl_fc2_);
    Theta theta{ad::reshape(ad::slice_last(flat, 0, dv * d), {batch, dv, d}), ad::slice_last(flat, dv * d, d)};
    if (ctx && ctx->trace) {
        ctx->trace->theta_weight = theta.weight;
        ctx->trace->theta_bias = theta.bias;
    }
    return theta;
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::apply_mapping(const Tensor& visual, const Theta& theta) {
    if (visual.rank() != 3 || theta.weight.rank() != 3 || theta.bias.rank() != 2 ||
        visual.dim(0) != theta.weight.dim(0) || visual.dim(2) != theta.weight.dim(1) ||
        theta.bias.dim(0) != visual.dim(0) || theta.bias.dim(1) != theta.weight.dim(2)) {
        throw ShapeError("apply_mapping: visual " + ad::shape_str(visual.shape()) + " with W " +
                         ad::shape_str(theta.weight.shape()) + " and b " + ad::shape_str(theta.bias.shape()));
    }
    return ad::add_batch_bias(ad::matmul(visual, theta.weight), theta.bias);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::static_mapping(const Tensor& visual) const {
    if (config_.variant != Variant::static_map) {
        throw VariantError("static_mapping requires the static variant (this model is " +
                           std::string(variant_name(config_.variant)) + ")");
    }
    return linear(visual, static_map_);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::project_visual(const Tensor& visual) const {
    if (config_.variant != Variant::no_lvpg) {
        throw VariantError("project_visual requires the no_lvpg variant (this model is " +
                           std::string(variant_name(config_.variant)) + ")");
    }
    return linear(visual, visual_proj_);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::visual_tensor(const Batch& batch) const {
    if (batch.num_visual == 0 || batch.visual.empty()) {
        throw FormatError("variant " + std::string(variant_name(config_.variant)) +
                          " needs visual tokens but the batch has none");
    }
    if (batch.visual_width != config_.d_v) {
        throw ConfigError("visual tokens have d_v = " + std::to_string(batch.visual_width) +
                          " but the model expects d_v = " + std::to_string(config_.d_v));
    }
    std::vector<T> values(batch.visual.begin(), batch.visual.end());
    return Tensor({batch.size, batch.num_visual, batch.visual_width}, std::move(values));
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::make_prompts(const Batch& batch, Context* ctx) const {
    if (!config_.uses_vision()) throw VariantError("text_only models have no visual prompts");
    const Tensor v = visual_tensor(batch);
    Tensor p;
    switch (config_.variant) {
    case Variant::full:
        p = apply_mapping(v, controller_forward(batch.tags(), ctx));
        break;
    case Variant::static_map:
        p = static_mapping(v);
        break;
    default:
        p = project_visual(v);
        break;
    }
    if (ctx && ctx->trace) ctx->trace->prompts = p;
    return p;
}

template <typename T>
std::pair<typename LvpM3Model<T>::Tensor, typename LvpM3Model<T>::Tensor>
LvpM3Model<T>::self_fuse(const Tensor& s0, const Tensor& p0, std::span<const TokenId> source,
                         Context* ctx) const {
    if (!config_.uses_vision()) throw VariantError("text_only models have no fusion stage");
    Context local;
    Context& c = ctx ? *ctx : local;
    const std::size_t batch = s0.dim(0), len = s0.dim(1);
    const Tensor s = run_block(text_fuse_, s0, s0, key_padding_mask(source, batch, len, len), c);
    const Tensor p = config_.variant == Variant::no_lvpg ? p0 : run_block(prompt_fuse_, p0, p0, {}, c);
    if (c.trace) {
        c.trace->text_fused = s;
        c.trace->prompt_fused = p;
    }
    return {s, p};
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::co_attention(const Tensor& s, const Tensor& p,
                                                           Context* ctx) const {
    if (!config_.uses_vision()) throw VariantError("text_only models have no co-attention");
    if (p.rank() != 3 || p.dim(1) == 0) throw ShapeError("co_attention needs a non-empty prompt sequence");
    Context local;
    Context& c = ctx ? *ctx : local;
    Tensor x = s;
    Tensor first_context;
    for (std::size_t i = 0; i < coattn_.size(); ++i) {
        x = run_block(coattn_[i], x, p, {}, c, i == 0 ? &first_context : nullptr);
    }
    if (c.trace) {
        c.trace->coattn_context = first_context;
        c.trace->guided = x;
    }
    return x;
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::memory(const Batch& batch, Context* ctx) const {
    Context local;
    Context& c = ctx ? *ctx : local;
    const Tensor s0 = encode_source(batch.source, batch.size, batch.src_len, &c);
    if (!config_.uses_vision()) {
        if (c.trace) c.trace->guided = s0;
        return s0;
    }
    const Tensor p0 = make_prompts(batch, &c);
    const auto [s, p] = self_fuse(s0, p0, batch.source, &c);
    return co_attention(s, p, &c);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::decode(const Tensor& memory, std::span<const TokenId> source,
                                                     std::span<const TokenId> decoder_input,
                                                     std::size_t tgt_len, Context* ctx) const {
    Context local;
    Context& c = ctx ? *ctx : local;
    if (memory.rank() != 3) throw ShapeError("decode: memory must be [B, F, d], got " + ad::shape_str(memory.shape()));
    const std::size_t batch = memory.dim(0), src_len = memory.dim(1);
    Tensor y = embed(decoder_input, batch, tgt_len, c);
    const auto self_mask = causal_mask(decoder_input, batch, tgt_len);
    const auto cross_mask = key_padding_mask(source, batch, src_len, tgt_len);
    for (const auto& blk : decoder_) {
        y = residual_norm(y, attention(blk.self_attn, y, y, self_mask, c), blk.norm1, c);
        y = residual_norm(y, attention(blk.cross_attn, y, memory, cross_mask, c), blk.norm2, c);
        y = residual_norm(y, feed_forward(blk.ffn, y), blk.norm3, c);
    }
    return ad::matmul_bt(y, embedding_);
}

template <typename T>
typename LvpM3Model<T>::Tensor LvpM3Model<T>::forward_loss(const Batch& batch, Context* ctx) const {
    Context local;
    Context& c = ctx ? *ctx : local;
    const Tensor mem = memory(batch, &c);
    const Tensor logits = decode(mem, batch.source, batch.decoder_input, batch.tgt_len, &c);
    return ad::cross_entropy_label_smoothed(
        ad::reshape(logits, {batch.size * batch.tgt_len, config_.vocab_size}), batch.labels,
        config_.eps_ls, text::kPad);
}

template class LvpM3Model<float>;
template class LvpM3Model<double>;
template ad::BasicTensor<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template ad::BasicTensor<double> sinusoidal_positions<double>(std::size_t, std::size_t);

} // namespace lvpm3::model
