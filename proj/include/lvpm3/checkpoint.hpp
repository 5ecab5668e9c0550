#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvpm3/bpe.hpp"
#include "lvpm3/model.hpp"

namespace lvpm3::model {

inline constexpr char kCheckpointMagic[4] = {'L', 'V', 'P', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterBlob {
    std::string name;
    ad::Shape shape;
    std::vector<float> values;
};

/// Optimizer and loop position needed for an exact resume. Moment vectors are aligned
/// with the model's parameter order.
struct TrainSnapshot {
    std::uint64_t step = 0;           // optimizer steps taken so far
    std::uint64_t epoch = 0;          // epoch the next step belongs to
    std::uint64_t batch_in_epoch = 0; // position of the next step inside that epoch
    std::uint64_t seed = 0;
    std::string config_json;          // echo of the training configuration
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    bool operator==(const TrainSnapshot&) const = default;
};

/// Layout (little-endian): "LVPM", u32 version, u32 length + model config JSON,
/// u32 parameter count, per parameter (u16 name length, name, u32 rank, u32 dims...,
/// float32 values), u32 length + vocabulary text, u32 length + merges text,
/// u8 train-state flag and, when set, u64 step/epoch/batch/seed, u32 length + config
/// JSON and the m then v float32 arrays of every parameter.
struct Checkpoint {
    ModelConfig config;
    std::vector<ParameterBlob> parameters;
    std::string vocab_text;  // empty when no tokenizer is bundled
    std::string merges_text;
    std::optional<TrainSnapshot> train;

    /// New model with these weights.
    Model build_model() const;
    bool has_tokenizer() const { return !vocab_text.empty(); }
    text::BpeTokenizer tokenizer() const;
};

Checkpoint make_checkpoint(const Model& model, const text::BpeTokenizer* tokenizer = nullptr,
                           const TrainSnapshot* train = nullptr);

/// Copies weights into `model`. Names, order and shapes must match exactly.
void load_parameters(Model& model, const std::vector<ParameterBlob>& blobs);

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

/// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace lvpm3::model
