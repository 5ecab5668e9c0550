#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lvpm3/grad_check.hpp"

namespace lvpm3::ad {

struct SuiteResult {
    std::string name;
    GradCheckReport report;
};

/// Finite-difference checks of every differentiable primitive and, when `full_model`
/// is set, of the complete loss for every model variant on a two-example toy batch
/// (every entry for the full variant, a sample of each tensor for the others).
/// `on_result` is called as each check finishes.
std::vector<SuiteResult> run_gradcheck_suite(bool full_model, std::uint64_t seed = 1,
                                             const std::function<void(const SuiteResult&)>& on_result = {});

} // namespace lvpm3::ad
