#include "lvpm3/batching.hpp"

#include <algorithm>
#include <numeric>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"

namespace lvpm3::text {

std::size_t padded_tokens(const std::vector<ParallelExample>& examples, const BatchIndices& batch) {
    std::size_t src = 0, tgt = 0;
    for (std::size_t i : batch) {
        src = std::max(src, examples[i].source_ids.size());
        tgt = std::max(tgt, examples[i].target_ids.size());
    }
    return std::max(src, tgt) * batch.size();
}

std::vector<BatchIndices> make_batches(const std::vector<ParallelExample>& examples,
                                       std::size_t max_tokens) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i : order) {
        const auto longest = std::max(examples[i].source_ids.size(), examples[i].target_ids.size());
        if (longest > max_tokens) {
            throw ConfigError("example " + examples[i].example_id + " has " +
                              std::to_string(longest) + " tokens, above max_tokens " +
                              std::to_string(max_tokens));
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = examples[a];
        const auto& eb = examples[b];
        if (ea.source_ids.size() != eb.source_ids.size()) {
            return ea.source_ids.size() < eb.source_ids.size();
        }
        return ea.target_ids.size() < eb.target_ids.size();
    });

    std::vector<BatchIndices> batches;
    BatchIndices current;
    std::size_t src = 0, tgt = 0;
    for (std::size_t i : order) {
        const std::size_t new_src = std::max(src, examples[i].source_ids.size());
        const std::size_t new_tgt = std::max(tgt, examples[i].target_ids.size());
        if (!current.empty() && std::max(new_src, new_tgt) * (current.size() + 1) > max_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            src = examples[i].source_ids.size();
            tgt = examples[i].target_ids.size();
        } else {
            src = new_src;
            tgt = new_tgt;
        }
        current.push_back(i);
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

std::vector<std::size_t> epoch_order(std::size_t num_batches, std::uint64_t seed,
                                     std::uint64_t epoch) {
    std::vector<std::size_t> order(num_batches);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix64(seed, epoch));
    for (std::size_t i = num_batches; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

} // namespace lvpm3::text
