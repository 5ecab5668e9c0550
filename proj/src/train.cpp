#include "lvpm3/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "lvpm3/error.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::train {

double lr_schedule(std::uint64_t step, const ScheduleConfig& config) {
    if (step == 0) throw ConfigError("learning-rate steps are 1-based");
    if (config.warmup_steps == 0 || step >= config.warmup_steps) {
        const double warmup = static_cast<double>(std::max<std::uint64_t>(config.warmup_steps, 1));
        return config.lr_peak * std::sqrt(warmup / static_cast<double>(step));
    }
    const double frac = static_cast<double>(step - 1) / static_cast<double>(config.warmup_steps - 1);
    return config.lr_init + (config.lr_peak - config.lr_init) * frac;
}

Adam::Adam(std::vector<NamedParameter> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.second.numel(), 0.0f);
        v_.emplace_back(p.second.numel(), 0.0f);
    }
}

void Adam::step(double lr) {
    for (const auto& [name, t] : params_) {
        if (!t.has_grad()) continue;
        for (float g : t.impl().grad) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
        }
    }
    ++steps_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& t = params_[k].second;
        if (!t.has_grad()) continue;
        const auto& grad = t.impl().grad;
        auto data = t.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
            data[i] = static_cast<float>(data[i] - update);
        }
    }
}

void Adam::restore(std::uint64_t steps, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw ShapeError("optimizer state has " + std::to_string(m.size()) + " tensors for " +
                         std::to_string(params_.size()) + " parameters");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (m[k].size() != params_[k].second.numel() || v[k].size() != params_[k].second.numel()) {
            throw ShapeError("optimizer moments for '" + params_[k].first + "' do not match its shape");
        }
    }
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

double clip_grad_norm(const std::vector<model::Model::NamedParameter>& params, double max_norm) {
    double total = 0.0;
    for (const auto& p : params) {
        if (!p.second.has_grad()) continue;
        for (float g : p.second.impl().grad) total += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(total);
    if (max_norm > 0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& p : params) {
            auto& grad = const_cast<ad::Tensor&>(p.second).impl().grad;
            for (float& g : grad) g = static_cast<float>(g * factor);
        }
    }
    return norm;
}

// ---- configuration ----

TrainConfig TrainConfig::from_json(std::string_view text, const std::filesystem::path& base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config is not valid JSON: ") + e.what());
    }
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        if (p.empty()) return {};
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    TrainConfig c;
    try {
        if (!j.contains("manifest")) throw ConfigError("training config needs a \"manifest\" entry");
        c.manifest = resolve(j.at("manifest").get<std::string>());
        c.tokenizer = resolve(j.value("tokenizer", std::string()));
        c.bpe_vocab_size = j.value("bpe_vocab_size", c.bpe_vocab_size);
        c.out_dir = resolve(j.value("out_dir", std::string("run")));
        if (j.contains("model")) c.model_json = j.at("model").dump();
        c.targets = j.value("targets", c.targets);
        c.epochs = j.value("epochs", c.epochs);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        c.seed = j.value("seed", c.seed);
        c.schedule.lr_init = j.value("lr_init", c.schedule.lr_init);
        c.schedule.lr_peak = j.value("lr_peak", c.schedule.lr_peak);
        c.schedule.warmup_steps = j.value("warmup_steps", c.schedule.warmup_steps);
        c.adam.beta1 = j.value("beta1", c.adam.beta1);
        c.adam.beta2 = j.value("beta2", c.adam.beta2);
        c.adam.eps = j.value("adam_eps", c.adam.eps);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.checkpoint_each_epoch = j.value("checkpoint_each_epoch", c.checkpoint_each_epoch);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    if (c.max_tokens == 0) throw ConfigError("max_tokens must be positive");
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open training config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text, path.parent_path());
}

std::string TrainConfig::to_json() const {
    nlohmann::json j{
        {"manifest", manifest.string()},
        {"tokenizer", tokenizer.string()},
        {"bpe_vocab_size", bpe_vocab_size},
        {"out_dir", out_dir.string()},
        {"model", nlohmann::json::parse(model_json)},
        {"targets", targets},
        {"epochs", epochs},
        {"max_steps", max_steps},
        {"max_tokens", max_tokens},
        {"seed", seed},
        {"lr_init", schedule.lr_init},
        {"lr_peak", schedule.lr_peak},
        {"warmup_steps", schedule.warmup_steps},
        {"beta1", adam.beta1},
        {"beta2", adam.beta2},
        {"adam_eps", adam.eps},
        {"clip_norm", clip_norm},
        {"checkpoint_each_epoch", checkpoint_each_epoch},
    };
    return j.dump(2);
}

// ---- trainer ----

Trainer::Trainer(model::Model& model, std::vector<text::ParallelExample> examples,
                 const vision::VisualTokenMap* visual, TrainConfig config)
    : model_(model),
      examples_(std::move(examples)),
      visual_(model.config().uses_vision() ? visual : nullptr),
      config_(std::move(config)),
      batches_(text::make_batches(examples_, config_.max_tokens)),
      adam_(model.parameters(), config_.adam) {
    if (examples_.empty()) throw DegenerateBatchError("no training examples");
    if (model.config().uses_vision() && !visual_) {
        throw ConfigError("variant " + std::string(model::variant_name(model.config().variant)) +
                          " needs visual tokens (set vtok_path in the manifest)");
    }
    order_ = text::epoch_order(batches_.size(), config_.seed, epoch_);
}

model::Batch Trainer::next_batch() const {
    return model::collate(examples_, batches_[order_[batch_in_epoch_]], visual_);
}

StepLog Trainer::step() {
    const auto start = std::chrono::steady_clock::now();
    const model::Batch batch = next_batch();
    const std::uint64_t step_no = adam_.steps() + 1;

    auto ctx = model::Model::Context::train(mix64(config_.seed, step_no));
    model_.zero_grad();
    ad::Tensor loss = model_.forward_loss(batch, &ctx);
    ad::backward(loss);
    if (config_.clip_norm > 0) clip_grad_norm(model_.parameters(), config_.clip_norm);
    const double lr = lr_schedule(step_no, config_.schedule);
    adam_.step(lr);

    StepLog log;
    log.step = step_no;
    log.epoch = epoch_;
    log.lr = lr;
    log.loss = loss.item();
    std::size_t tokens = batch.target_tokens();
    for (text::TokenId t : batch.source) tokens += t != text::kPad;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.tokens_per_sec = seconds > 0 ? static_cast<double>(tokens) / seconds : 0.0;

    if (++batch_in_epoch_ == batches_.size()) {
        batch_in_epoch_ = 0;
        ++epoch_;
        order_ = text::epoch_order(batches_.size(), config_.seed, epoch_);
    }
    return log;
}

model::TrainSnapshot Trainer::snapshot() const {
    model::TrainSnapshot s;
    s.step = adam_.steps();
    s.epoch = epoch_;
    s.batch_in_epoch = batch_in_epoch_;
    s.seed = config_.seed;
    s.config_json = config_.to_json();
    s.m = adam_.first_moments();
    s.v = adam_.second_moments();
    return s;
}

void Trainer::restore(const model::TrainSnapshot& s) {
    if (s.batch_in_epoch >= batches_.size()) {
        throw ConfigError("checkpoint resumes at batch " + std::to_string(s.batch_in_epoch) + " but an epoch has " +
                          std::to_string(batches_.size()) + " batches; the training data changed");
    }
    if (s.seed != config_.seed) {
        throw ConfigError("checkpoint was trained with seed " + std::to_string(s.seed) + ", config says " +
                          std::to_string(config_.seed));
    }
    adam_.restore(s.step, s.m, s.v);
    epoch_ = s.epoch;
    batch_in_epoch_ = s.batch_in_epoch;
    order_ = text::epoch_order(batches_.size(), config_.seed, epoch_);
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
    if (!std::filesystem::exists(path_)) {
        std::ofstream out(path_);
        if (!out) throw FormatError("cannot create metrics log " + path_.string());
        out << "step,epoch,lr,loss,tokens_per_sec\n";
    }
}

void MetricsLog::append(const StepLog& log) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw FormatError("cannot append to metrics log " + path_.string());
    out.precision(9);
    out << log.step << ',' << log.epoch << ',' << log.lr << ',' << log.loss << ',' << log.tokens_per_sec << '\n';
}

TrainResult run_training(const TrainConfig& config, const std::optional<std::filesystem::path>& resume,
                         const std::function<void(const StepLog&)>& on_step) {
    const auto manifest = text::CorpusManifest::load(config.manifest);
    const auto corpus = text::load_corpus(manifest);
    std::filesystem::create_directories(config.out_dir);

    std::optional<model::Checkpoint> ckpt;
    if (resume) {
        ckpt = model::load_checkpoint(*resume);
        if (!ckpt->train) throw ConfigError("checkpoint " + resume->string() + " has no training state to resume");
    }

    text::BpeTokenizer tokenizer;
    if (ckpt && ckpt->has_tokenizer()) {
        tokenizer = ckpt->tokenizer();
    } else if (!config.tokenizer.empty()) {
        tokenizer = text::BpeTokenizer::load(config.tokenizer);
    } else {
        std::vector<std::string> lines;
        for (const auto& [lang, text_lines] : corpus.lines) lines.insert(lines.end(), text_lines.begin(), text_lines.end());
        text::BpeTrainOptions opts;
        opts.vocab_size = config.bpe_vocab_size;
        opts.languages = manifest.languages;
        tokenizer = text::train_bpe(lines, opts);
        tokenizer.save(config.out_dir / "bpe");
    }

    auto model_config = model::ModelConfig::from_json(config.model_json);
    model_config.vocab_size = tokenizer.vocab().size();
    model::Model model = ckpt ? ckpt->build_model() : model::Model(model_config, config.seed);
    if (ckpt && ckpt->config.vocab_size != tokenizer.vocab().size()) {
        throw ConfigError("checkpoint vocabulary size does not match its tokenizer");
    }

    vision::VisualTokenMap visual;
    if (model.config().uses_vision()) {
        if (manifest.vtok_path.empty()) {
            throw ConfigError("variant " + std::string(model::variant_name(model.config().variant)) +
                              " needs visual tokens but the manifest has no vtok_path");
        }
        visual = vision::read_vtok(manifest.vtok_path);
        if (!visual.empty() && visual.begin()->second.width != model.config().d_v) {
            throw ConfigError(manifest.vtok_path.string() + " has d_v = " +
                              std::to_string(visual.begin()->second.width) + " but the model expects d_v = " +
                              std::to_string(model.config().d_v));
        }
    }

    Trainer trainer(model, text::build_examples(corpus, tokenizer, config.targets),
                    model.config().uses_vision() ? &visual : nullptr, config);
    if (ckpt) trainer.restore(*ckpt->train);

    MetricsLog metrics(config.out_dir / "metrics.csv");
    TrainResult result;
    result.last_checkpoint = config.out_dir / "checkpoint_last.lvpm";
    auto save = [&](const std::filesystem::path& path) {
        const auto snap = trainer.snapshot();
        model::save_checkpoint(model::make_checkpoint(model, &tokenizer, &snap), path);
    };

    while (trainer.epoch() < config.epochs && (config.max_steps == 0 || trainer.steps_taken() < config.max_steps)) {
        const StepLog log = trainer.step();
        metrics.append(log);
        result.logs.push_back(log);
        if (on_step) on_step(log);
        if (trainer.batch_in_epoch() == 0 && config.checkpoint_each_epoch) {
            save(config.out_dir / ("checkpoint_epoch" + std::to_string(trainer.epoch()) + ".lvpm"));
        }
    }
    save(result.last_checkpoint);
    return result;
}

} // namespace lvpm3::train
