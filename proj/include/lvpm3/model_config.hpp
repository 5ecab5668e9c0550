#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace lvpm3::model {

/// Ablation switch for the prompt path.
enum class Variant {
    full,      // controller-generated mapping, conditioned on the target-language tag
    no_lvpg,   // fixed linear projection of visual tokens straight into co-attention
    static_map, // learned mapping shared by every target language
    text_only, // no vision at all; decoder attends to encoder states
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 96;
    std::size_t n_heads = 4;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t d_ffn = 0;  // 0 means 4 * d_model
    std::size_t d_v = 32;
    std::size_t d_ctrl = 0; // 0 means d_model
    std::size_t n_coattn_layers = 1;
    Variant variant = Variant::full;
    double dropout = 0.3;
    double eps_ls = 0.1;

    std::size_t ffn_width() const { return d_ffn ? d_ffn : 4 * d_model; }
    std::size_t controller_width() const { return d_ctrl ? d_ctrl : d_model; }
    /// Flat controller output: W (d_v x d_model) followed by b (d_model).
    std::size_t controller_output() const { return d_v * d_model + d_model; }
    bool uses_vision() const { return variant != Variant::text_only; }

    /// Throws ConfigError on inconsistent settings.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(std::string_view text);

    bool operator==(const ModelConfig&) const = default;
};

} // namespace lvpm3::model
