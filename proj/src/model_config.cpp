#include "lvpm3/model_config.hpp"

#include <json.hpp>

#include "lvpm3/error.hpp"

namespace lvpm3::model {

std::string_view variant_name(Variant v) {
    switch (v) {
    case Variant::full:
        return "full";
    case Variant::no_lvpg:
        return "no_lvpg";
    case Variant::static_map:
        return "static";
    case Variant::text_only:
        return "text_only";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : {Variant::full, Variant::no_lvpg, Variant::static_map, Variant::text_only}) {
        if (variant_name(v) == name) return v;
    }
    throw ConfigError("unknown model variant '" + std::string(name) +
                      "' (expected full, no_lvpg, static or text_only)");
}

void ModelConfig::validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must be at least 3");
    if (d_model == 0 || n_heads == 0) throw ConfigError("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (uses_vision() && d_v == 0) throw ConfigError("d_v must be positive unless variant is text_only");
    if (uses_vision() && n_coattn_layers == 0) throw ConfigError("n_coattn_layers must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(eps_ls >= 0.0 && eps_ls < 1.0)) throw ConfigError("eps_ls must lie in [0, 1)");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j{
        {"vocab_size", vocab_size},   {"d_model", d_model},
        {"n_heads", n_heads},         {"n_enc_layers", n_enc_layers},
        {"n_dec_layers", n_dec_layers}, {"d_ffn", ffn_width()},
        {"d_v", d_v},                 {"d_ctrl", controller_width()},
        {"n_coattn_layers", n_coattn_layers}, {"variant", std::string(variant_name(variant))},
        {"dropout", dropout},         {"eps_ls", eps_ls},
    };
    return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.d_model = j.value("d_model", c.d_model);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
        c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
        c.d_ffn = j.value("d_ffn", c.d_ffn);
        c.d_v = j.value("d_v", c.d_v);
        c.d_ctrl = j.value("d_ctrl", c.d_ctrl);
        c.n_coattn_layers = j.value("n_coattn_layers", c.n_coattn_layers);
        c.variant = parse_variant(j.value("variant", std::string("full")));
        c.dropout = j.value("dropout", c.dropout);
        c.eps_ls = j.value("eps_ls", c.eps_ls);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    if (c.d_ffn == 4 * c.d_model) c.d_ffn = 0;
    if (c.d_ctrl == c.d_model) c.d_ctrl = 0;
    return c;
}

} // namespace lvpm3::model
