#include "lvpm3/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "lvpm3/error.hpp"

namespace lvpm3::model {

using detail::ByteReader;
using detail::put_bytes;
using detail::put_f32;
using detail::put_u16;
using detail::put_u32;
using detail::put_u64;

namespace {

void put_string(std::vector<char>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s);
}

std::string get_string(ByteReader& in, const char* what) {
    const std::uint32_t n = in.u32(what);
    return in.str(n, what);
}

void put_floats(std::vector<char>& out, const std::vector<float>& v) {
    for (float x : v) put_f32(out, x);
}

std::vector<float> get_floats(ByteReader& in, std::size_t n, const char* what) {
    in.need(n * 4, what);
    std::vector<float> v(n);
    for (auto& x : v) x = in.f32(what);
    return v;
}

} // namespace

Checkpoint make_checkpoint(const Model& model, const text::BpeTokenizer* tokenizer, const TrainSnapshot* train) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    for (const auto& [name, t] : model.parameters()) {
        ckpt.parameters.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    }
    if (tokenizer) {
        ckpt.vocab_text = tokenizer->vocab().serialize();
        ckpt.merges_text = tokenizer->serialize_merges();
    }
    if (train) {
        if (train->m.size() != ckpt.parameters.size() || train->v.size() != ckpt.parameters.size()) {
            throw ShapeError("optimizer state has " + std::to_string(train->m.size()) +
                             " moment tensors for " + std::to_string(ckpt.parameters.size()) + " parameters");
        }
        for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
            if (train->m[i].size() != ckpt.parameters[i].values.size() ||
                train->v[i].size() != ckpt.parameters[i].values.size()) {
                throw ShapeError("optimizer moments for '" + ckpt.parameters[i].name + "' have the wrong size");
            }
        }
        ckpt.train = *train;
    }
    return ckpt;
}

void load_parameters(Model& model, const std::vector<ParameterBlob>& blobs) {
    const auto& params = model.parameters();
    if (params.size() != blobs.size()) {
        throw FormatError("checkpoint has " + std::to_string(blobs.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        const auto& [name, tensor] = params[i];
        if (blobs[i].name != name) {
            throw FormatError("checkpoint parameter " + std::to_string(i) + " is '" + blobs[i].name +
                              "', model expects '" + name + "'");
        }
        if (blobs[i].shape != tensor.shape()) {
            throw FormatError("checkpoint parameter '" + name + "' has shape " + ad::shape_str(blobs[i].shape) +
                              ", model expects " + ad::shape_str(tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        auto dst = model.parameter(blobs[i].name).mutable_data();
        std::copy(blobs[i].values.begin(), blobs[i].values.end(), dst.begin());
    }
}

Model Checkpoint::build_model() const {
    Model model(config, 0);
    load_parameters(model, parameters);
    return model;
}

text::BpeTokenizer Checkpoint::tokenizer() const {
    if (!has_tokenizer()) throw FormatError("checkpoint does not bundle a tokenizer");
    return text::BpeTokenizer(text::Vocabulary::deserialize(vocab_text),
                              text::BpeTokenizer::deserialize_merges(merges_text));
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_string(out, ckpt.config.to_json());
    put_u32(out, static_cast<std::uint32_t>(ckpt.parameters.size()));
    for (const auto& p : ckpt.parameters) {
        if (p.name.size() > UINT16_MAX) throw FormatError("parameter name too long: " + p.name);
        if (ad::shape_numel(p.shape) != p.values.size()) {
            throw ShapeError("parameter '" + p.name + "' has " + std::to_string(p.values.size()) +
                             " values for shape " + ad::shape_str(p.shape));
        }
        put_u16(out, static_cast<std::uint16_t>(p.name.size()));
        put_bytes(out, p.name);
        put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
        for (std::size_t d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
        put_floats(out, p.values);
    }
    put_string(out, ckpt.vocab_text);
    put_string(out, ckpt.merges_text);
    out.push_back(ckpt.train ? 1 : 0);
    if (ckpt.train) {
        const auto& t = *ckpt.train;
        put_u64(out, t.step);
        put_u64(out, t.epoch);
        put_u64(out, t.batch_in_epoch);
        put_u64(out, t.seed);
        put_string(out, t.config_json);
        for (const auto& m : t.m) put_floats(out, m);
        for (const auto& v : t.v) put_floats(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
    ByteReader in(bytes, "checkpoint");
    in.need(4, "magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint (bad magic at byte offset 0)");
    }
    in.str(4, "magic");
    const std::uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(get_string(in, "model config"));
    const std::uint32_t count = in.u32("parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        ParameterBlob p;
        p.name = in.str(in.u16("name length"), "parameter name");
        const std::uint32_t rank = in.u32("rank");
        if (rank == 0 || rank > 8) {
            throw FormatError("parameter '" + p.name + "' has implausible rank " + std::to_string(rank) +
                              " at byte offset " + std::to_string(in.offset() - 4));
        }
        for (std::uint32_t r = 0; r < rank; ++r) p.shape.push_back(in.u32("dimension"));
        p.values = get_floats(in, ad::shape_numel(p.shape), "parameter values");
        ckpt.parameters.push_back(std::move(p));
    }
    ckpt.vocab_text = get_string(in, "vocabulary");
    ckpt.merges_text = get_string(in, "merges");
    const std::uint8_t has_train = in.u8("train-state flag");
    if (has_train > 1) throw FormatError("bad train-state flag at byte offset " + std::to_string(in.offset() - 1));
    if (has_train) {
        TrainSnapshot t;
        t.step = in.u64("step");
        t.epoch = in.u64("epoch");
        t.batch_in_epoch = in.u64("batch position");
        t.seed = in.u64("seed");
        t.config_json = get_string(in, "train config");
        for (const auto& p : ckpt.parameters) t.m.push_back(get_floats(in, p.values.size(), "first moments"));
        for (const auto& p : ckpt.parameters) t.v.push_back(get_floats(in, p.values.size(), "second moments"));
        ckpt.train = std::move(t);
    }
    if (!in.done()) {
        throw FormatError("checkpoint has trailing bytes at offset " + std::to_string(in.offset()));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace lvpm3::model
