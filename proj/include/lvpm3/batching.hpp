#pragma once

#include <cstdint>
#include <vector>

#include "lvpm3/corpus.hpp"

namespace lvpm3::text {

/// Indices into the example list that form one mini-batch.
using BatchIndices = std::vector<std::size_t>;

/// Padded token count of a candidate batch: max_len * size, taken separately for
/// source and target; the larger one is what the cap constrains.
std::size_t padded_tokens(const std::vector<ParallelExample>& examples, const BatchIndices& batch);

/// Sorts by (source length, target length, position) and packs greedily so that every
/// batch's padded token count stays within max_tokens.
std::vector<BatchIndices> make_batches(const std::vector<ParallelExample>& examples,
                                       std::size_t max_tokens);

/// Deterministic batch order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t num_batches, std::uint64_t seed,
                                     std::uint64_t epoch);

} // namespace lvpm3::text
