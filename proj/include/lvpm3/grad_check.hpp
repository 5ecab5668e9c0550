#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lvpm3/tensor.hpp"

namespace lvpm3::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t entries_checked = 0;
    std::string worst_entry; // "<input>[<flat index>]"
    std::size_t refined_entries = 0; // entries that needed a smaller step
    bool passed = false;
};

/// Inputs named for the report; their storage is perturbed in place and restored.
struct GradCheckInput {
    std::string name;
    Tensor64 tensor;
};

struct GradCheckOptions {
    double step = 1e-3;
    double tolerance = 1e-3;
    /// Entries below this magnitude (in both gradients) are compared absolutely.
    double denominator_floor = 1e-6;
    /// 0 checks every entry; otherwise a seeded sample of this many per input.
    std::size_t max_entries_per_input = 0;
    std::uint64_t seed = 0;
    /// An entry that fails at `step` is re-measured at step/10, step/100, ... this many
    /// times. A ReLU kink within `step` of the point spoils the central difference even
    /// though the analytic gradient is exact; shrinking the step separates the two cases.
    std::size_t refinements = 2;
};

/// Compares analytic gradients of a scalar function against central differences,
/// always in double precision. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const std::function<Tensor64()>& f,
                           const std::vector<GradCheckInput>& inputs,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x,
                           double step = 1e-3, double tolerance = 1e-3);

} // namespace lvpm3::ad
