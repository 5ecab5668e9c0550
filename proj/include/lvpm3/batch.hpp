#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lvpm3/batching.hpp"
#include "lvpm3/corpus.hpp"
#include "lvpm3/vtok.hpp"

namespace lvpm3::model {

using text::TokenId;

/// Padded, model-ready mini-batch. All id arrays are row-major [size x len].
struct Batch {
    std::size_t size = 0;
    std::size_t src_len = 0;
    std::size_t tgt_len = 0;
    std::vector<TokenId> source;        // [tag, BOS, ..., EOS, PAD...]
    std::vector<TokenId> decoder_input; // [BOS, y_1, ..., PAD...]
    std::vector<TokenId> labels;        // [y_1, ..., EOS, PAD...]
    std::size_t num_visual = 0;         // M_v, 0 when no visual tokens are attached
    std::size_t visual_width = 0;       // d_v
    std::vector<float> visual;          // [size x M_v x d_v]
    std::vector<std::string> example_ids;

    TokenId tag(std::size_t row) const { return source[row * src_len]; }
    std::vector<TokenId> tags() const;
    /// Non-pad label count.
    std::size_t target_tokens() const;
};

/// Pads the given sequences. `targets` end with EOS; the decoder input is BOS followed by
/// all but the last target token. `visual` is either empty or one entry per row.
Batch make_batch(const std::vector<std::vector<TokenId>>& sources,
                 const std::vector<std::vector<TokenId>>& targets,
                 const std::vector<const vision::VisualTokens*>& visual = {});

/// Gathers examples[indices]; visual tokens are looked up by image id when `visual` is
/// given (a missing id is a FormatError).
Batch collate(const std::vector<text::ParallelExample>& examples, const text::BatchIndices& indices,
              const vision::VisualTokenMap* visual);

} // namespace lvpm3::model
