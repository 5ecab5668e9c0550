#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lvpm3/batch.hpp"
#include "lvpm3/model_config.hpp"
#include "lvpm3/ops.hpp"
#include "lvpm3/rng.hpp"

namespace lvpm3::model {

/// Intermediate activations captured during one forward pass (for tests and inspection).
template <typename T>
struct ForwardTrace {
    ad::BasicTensor<T> source_states;  // S0 [B, F, d]
    ad::BasicTensor<T> theta_weight;   // [B, d_v, d]
    ad::BasicTensor<T> theta_bias;     // [B, d]
    ad::BasicTensor<T> prompts;        // P0 [B, M_v, d]
    ad::BasicTensor<T> text_fused;     // S
    ad::BasicTensor<T> prompt_fused;   // P
    ad::BasicTensor<T> coattn_context; // first co-attention block, before the residual
    ad::BasicTensor<T> guided;         // Q
    std::vector<ad::BasicTensor<T>> attention; // every attention distribution [B, H, Tq, Tk]
};

/// Per-call state: dropout on/off, its random stream, and an optional trace sink.
template <typename T>
struct ForwardContext {
    bool training = false;
    Rng rng{0};
    ForwardTrace<T>* trace = nullptr;

    static ForwardContext train(std::uint64_t seed) { return ForwardContext{true, Rng(seed), nullptr}; }
};

template <typename T>
class LvpM3Model {
  public:
    using Tensor = ad::BasicTensor<T>;
    using Context = ForwardContext<T>;
    using NamedParameter = std::pair<std::string, Tensor>;

    /// Generated affine map for the visual tokens of each batch row.
    struct Theta {
        Tensor weight; // [B, d_v, d]
        Tensor bias;   // [B, d]
    };

    LvpM3Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    /// Every trainable tensor in a fixed order with stable names.
    const std::vector<NamedParameter>& parameters() const { return params_; }
    Tensor& parameter(const std::string& name);
    const Tensor& parameter(const std::string& name) const;
    bool has_parameter(const std::string& name) const;
    std::size_t num_weights() const;
    void zero_grad();

    /// Source ids [B x F] (tag first) -> S0 [B, F, d].
    Tensor encode_source(std::span<const TokenId> source, std::size_t batch, std::size_t len,
                         Context* ctx = nullptr) const;

    /// Controller applied to the embedding rows of the given language tags.
    Theta controller_forward(std::span<const TokenId> tags, Context* ctx = nullptr) const;

    /// p_m = v_m W + b per batch row. v is [B, M_v, d_v].
    static Tensor apply_mapping(const Tensor& visual, const Theta& theta);
    /// Same affine form with language-independent learned W, b.
    Tensor static_mapping(const Tensor& visual) const;
    /// Bias-free learned projection used by the no_lvpg variant.
    Tensor project_visual(const Tensor& visual) const;

    /// P0 for the configured variant.
    Tensor make_prompts(const Batch& batch, Context* ctx = nullptr) const;

    /// One Transformer layer per modality. The text stream masks PAD keys taken from
    /// `source`; the prompt stream is skipped for no_lvpg.
    std::pair<Tensor, Tensor> self_fuse(const Tensor& s0, const Tensor& p0,
                                        std::span<const TokenId> source,
                                        Context* ctx = nullptr) const;

    /// Query S, key/value P -> Q [B, F, d].
    Tensor co_attention(const Tensor& s, const Tensor& p, Context* ctx = nullptr) const;

    /// Everything up to the decoder memory Q (S0 itself for text_only).
    Tensor memory(const Batch& batch, Context* ctx = nullptr) const;

    /// Teacher-forced decoder: [B x T] inputs starting with BOS -> logits [B, T, V].
    Tensor decode(const Tensor& memory, std::span<const TokenId> source,
                  std::span<const TokenId> decoder_input, std::size_t tgt_len,
                  Context* ctx = nullptr) const;

    /// Mean label-smoothed cross-entropy over non-pad target tokens.
    Tensor forward_loss(const Batch& batch, Context* ctx = nullptr) const;

    /// Visual tokens of a batch as a constant [B, M_v, d_v] tensor.
    Tensor visual_tensor(const Batch& batch) const;

    /// Same weights in another precision.
    template <typename U>
    LvpM3Model<U> converted() const {
        LvpM3Model<U> out(config_, 0);
        for (const auto& [name, tensor] : params_) {
            auto dst = out.parameter(name).mutable_data();
            const auto src = tensor.data();
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
        }
        return out;
    }

    struct Linear {
        Tensor weight; // [in, out]
        Tensor bias;   // [out], empty if bias-free
    };
    struct Norm {
        Tensor gain, bias;
    };
    struct Attention {
        Linear q, k, v, o;
    };
    struct FeedForward {
        Linear in, out;
    };
    struct Block { // attention + FFN, post-norm
        Attention attn;
        Norm norm1;
        FeedForward ffn;
        Norm norm2;
    };
    struct DecoderBlock {
        Attention self_attn;
        Norm norm1;
        Attention cross_attn;
        Norm norm2;
        FeedForward ffn;
        Norm norm3;
    };

  private:
    Tensor add_param(const std::string& name, ad::Shape shape, std::vector<T> values);
    Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool with_bias = true);
    Norm make_norm(const std::string& name);
    Attention make_attention(const std::string& name, Rng& rng);
    FeedForward make_ffn(const std::string& name, Rng& rng);
    Block make_block(const std::string& name, Rng& rng);

    Tensor embed(std::span<const TokenId> ids, std::size_t batch, std::size_t len, Context& ctx) const;
    Tensor linear(const Tensor& x, const Linear& l) const;
    Tensor attention(const Attention& a, const Tensor& query, const Tensor& kv,
                     std::span<const std::uint8_t> allowed, Context& ctx) const;
    Tensor feed_forward(const FeedForward& f, const Tensor& x) const;
    Tensor residual_norm(const Tensor& x, const Tensor& branch, const Norm& n, Context& ctx) const;
    Tensor run_block(const Block& blk, const Tensor& query, const Tensor& kv,
                     std::span<const std::uint8_t> allowed, Context& ctx,
                     Tensor* context_out = nullptr) const;

    ModelConfig config_;
    std::vector<NamedParameter> params_;

    Tensor embedding_;
    std::vector<Block> encoder_;
    Linear ctrl_fc1_, ctrl_fc2_;
    Linear static_map_;
    Linear visual_proj_;
    Block text_fuse_, prompt_fuse_;
    std::vector<Block> coattn_;
    std::vector<DecoderBlock> decoder_;
};

/// Sinusoidal position table [len, d].
template <typename T>
ad::BasicTensor<T> sinusoidal_positions(std::size_t len, std::size_t d);

/// [B, Tq, Tk] mask admitting keys whose id is not PAD.
std::vector<std::uint8_t> key_padding_mask(std::span<const TokenId> keys, std::size_t batch,
                                           std::size_t key_len, std::size_t query_len);
/// Key padding plus causality (key position <= query position).
std::vector<std::uint8_t> causal_mask(std::span<const TokenId> ids, std::size_t batch, std::size_t len);

extern template class LvpM3Model<float>;
extern template class LvpM3Model<double>;

using Model = LvpM3Model<float>;
using Model64 = LvpM3Model<double>;

} // namespace lvpm3::model
