#include "lvpm3/batch.hpp"

#include <algorithm>

#include "lvpm3/error.hpp"

namespace lvpm3::model {

std::vector<TokenId> Batch::tags() const {
    std::vector<TokenId> out(size);
    for (std::size_t b = 0; b < size; ++b) out[b] = tag(b);
    return out;
}

std::size_t Batch::target_tokens() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](TokenId t) { return t != text::kPad; }));
}

Batch make_batch(const std::vector<std::vector<TokenId>>& sources,
                 const std::vector<std::vector<TokenId>>& targets,
                 const std::vector<const vision::VisualTokens*>& visual) {
    if (sources.empty()) throw DegenerateBatchError("cannot build an empty batch");
    if (sources.size() != targets.size()) {
        throw ShapeError("batch has " + std::to_string(sources.size()) + " sources but " +
                         std::to_string(targets.size()) + " targets");
    }
    if (!visual.empty() && visual.size() != sources.size()) {
        throw ShapeError("batch has " + std::to_string(sources.size()) + " sources but " +
                         std::to_string(visual.size()) + " visual entries");
    }
    Batch batch;
    batch.size = sources.size();
    for (std::size_t i = 0; i < batch.size; ++i) {
        if (sources[i].empty()) throw ShapeError("empty source sequence in batch row " + std::to_string(i));
        if (targets[i].empty()) throw ShapeError("empty target sequence in batch row " + std::to_string(i));
        batch.src_len = std::max(batch.src_len, sources[i].size());
        batch.tgt_len = std::max(batch.tgt_len, targets[i].size());
    }
    batch.source.assign(batch.size * batch.src_len, text::kPad);
    batch.decoder_input.assign(batch.size * batch.tgt_len, text::kPad);
    batch.labels.assign(batch.size * batch.tgt_len, text::kPad);
    for (std::size_t i = 0; i < batch.size; ++i) {
        std::copy(sources[i].begin(), sources[i].end(), batch.source.begin() + i * batch.src_len);
        const auto& y = targets[i];
        TokenId* in = batch.decoder_input.data() + i * batch.tgt_len;
        TokenId* out = batch.labels.data() + i * batch.tgt_len;
        in[0] = text::kBos;
        for (std::size_t t = 0; t < y.size(); ++t) {
            out[t] = y[t];
            if (t + 1 < y.size()) in[t + 1] = y[t];
        }
    }
    if (!visual.empty()) {
        batch.num_visual = visual.front()->num_tokens;
        batch.visual_width = visual.front()->width;
        batch.visual.reserve(batch.size * batch.num_visual * batch.visual_width);
        for (const auto* v : visual) {
            if (v->num_tokens != batch.num_visual || v->width != batch.visual_width) {
                throw ShapeError("visual tokens for '" + v->image_id + "' are " +
                                 std::to_string(v->num_tokens) + "x" + std::to_string(v->width) +
                                 ", batch uses " + std::to_string(batch.num_visual) + "x" +
                                 std::to_string(batch.visual_width));
            }
            batch.visual.insert(batch.visual.end(), v->values.begin(), v->values.end());
        }
    }
    return batch;
}

Batch collate(const std::vector<text::ParallelExample>& examples, const text::BatchIndices& indices,
              const vision::VisualTokenMap* visual) {
    std::vector<std::vector<TokenId>> sources, targets;
    std::vector<const vision::VisualTokens*> vis;
    std::vector<std::string> ids;
    for (std::size_t i : indices) {
        const auto& ex = examples.at(i);
        sources.push_back(ex.source_ids);
        targets.push_back(ex.target_ids);
        ids.push_back(ex.example_id);
        if (visual) {
            auto it = visual->find(ex.image_id);
            if (it == visual->end()) {
                throw FormatError("no visual tokens for image id '" + ex.image_id + "' (example " +
                                  ex.example_id + ")");
            }
            vis.push_back(&it->second);
        }
    }
    Batch batch = make_batch(sources, targets, vis);
    batch.example_ids = std::move(ids);
    return batch;
}

} // namespace lvpm3::model
