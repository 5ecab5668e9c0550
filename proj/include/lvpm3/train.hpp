#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lvpm3/batch.hpp"
#include "lvpm3/checkpoint.hpp"
#include "lvpm3/model.hpp"

namespace lvpm3::train {

struct ScheduleConfig {
    double lr_init = 1e-7;
    double lr_peak = 1e-4;
    std::uint64_t warmup_steps = 2000;
};

/// Linear warmup from lr_init (step 1) to lr_peak (step warmup_steps), then
/// lr_peak * sqrt(warmup_steps / step). Steps are 1-based.
double lr_schedule(std::uint64_t step, const ScheduleConfig& config = {});

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
};

/// Adam with bias correction. Arithmetic is done in double; moments are stored as float.
class Adam {
  public:
    using NamedParameter = model::Model::NamedParameter;

    Adam(std::vector<NamedParameter> params, AdamConfig config = {});

    /// Applies one update from the parameters' current gradients. Parameters without a
    /// gradient are skipped. A non-finite gradient aborts before anything is modified.
    void step(double lr);

    std::uint64_t steps() const { return steps_; }
    const std::vector<std::vector<float>>& first_moments() const { return m_; }
    const std::vector<std::vector<float>>& second_moments() const { return v_; }
    void restore(std::uint64_t steps, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v);

  private:
    std::vector<NamedParameter> params_;
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm
/// before clipping.
double clip_grad_norm(const std::vector<model::Model::NamedParameter>& params, double max_norm);

/// JSON training configuration. Paths are resolved against the config file's directory.
struct TrainConfig {
    std::filesystem::path manifest;
    std::filesystem::path tokenizer;  // BPE prefix; empty means train one on the corpus
    std::size_t bpe_vocab_size = 8000;
    std::filesystem::path out_dir = "run";
    std::string model_json = "{}";    // ModelConfig fields; vocab_size comes from the tokenizer
    std::vector<std::string> targets; // empty = all non-source languages in the manifest
    std::uint64_t epochs = 30;
    std::uint64_t max_steps = 0;      // 0 = no limit
    std::size_t max_tokens = 4096;
    std::uint64_t seed = 1;
    ScheduleConfig schedule;
    AdamConfig adam;
    double clip_norm = 0.0;           // 0 = no clipping
    bool checkpoint_each_epoch = true;

    static TrainConfig from_json(std::string_view text, const std::filesystem::path& base_dir = {});
    static TrainConfig load(const std::filesystem::path& path);
    std::string to_json() const;
};

struct StepLog {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double tokens_per_sec = 0.0;
};

/// Drives optimization over a fixed example set: fixed length-sorted batches, reshuffled
/// each epoch from (seed, epoch); dropout randomness is derived from (seed, step).
class Trainer {
  public:
    Trainer(model::Model& model, std::vector<text::ParallelExample> examples,
            const vision::VisualTokenMap* visual, TrainConfig config);

    /// One optimizer step on the next batch.
    StepLog step();

    std::uint64_t steps_taken() const { return adam_.steps(); }
    std::uint64_t epoch() const { return epoch_; }
    std::uint64_t batch_in_epoch() const { return batch_in_epoch_; }
    std::size_t batches_per_epoch() const { return batches_.size(); }
    const std::vector<text::BatchIndices>& batches() const { return batches_; }

    /// Batch that the next call to step() will use.
    model::Batch next_batch() const;

    model::TrainSnapshot snapshot() const;
    void restore(const model::TrainSnapshot& snapshot);

    const TrainConfig& config() const { return config_; }

  private:
    model::Model& model_;
    std::vector<text::ParallelExample> examples_;
    const vision::VisualTokenMap* visual_;
    TrainConfig config_;
    std::vector<text::BatchIndices> batches_;
    Adam adam_;
    std::uint64_t epoch_ = 0;
    std::uint64_t batch_in_epoch_ = 0;
    std::vector<std::size_t> order_;
};

/// Appends rows to a metrics CSV {step, epoch, lr, loss, tokens_per_sec}, writing the
/// header when the file is new.
class MetricsLog {
  public:
    explicit MetricsLog(const std::filesystem::path& path);
    void append(const StepLog& log);

  private:
    std::filesystem::path path_;
};

struct TrainResult {
    std::filesystem::path last_checkpoint;
    std::vector<StepLog> logs;
};

/// Full pipeline behind `lvpm3 train`: corpus, tokenizer, model, loop, metrics and
/// checkpoints in config.out_dir. `resume` continues from a checkpoint with train state.
TrainResult run_training(const TrainConfig& config, const std::optional<std::filesystem::path>& resume = {},
                         const std::function<void(const StepLog&)>& on_step = {});

} // namespace lvpm3::train
