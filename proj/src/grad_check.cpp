#include "lvpm3/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lvpm3/error.hpp"
#include "lvpm3/rng.hpp"

namespace lvpm3::ad {

GradCheckReport grad_check(const std::function<Tensor64()>& f,
                           const std::vector<GradCheckInput>& inputs,
                           const GradCheckOptions& options) {
    for (const auto& in : inputs) {
        if (!in.tensor.requires_grad()) {
            throw BackwardError("grad_check input '" + in.name + "' does not require a gradient");
        }
        const_cast<Tensor64&>(in.tensor).zero_grad();
    }
    Tensor64 loss = f();
    if (loss.numel() != 1) {
        throw BackwardError("grad_check needs a scalar-valued function");
    }
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) {
        analytic.push_back(in.tensor.grad());
    }

    GradCheckReport report;
    Rng rng(options.seed);
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor64 x = inputs[k].tensor;
        std::vector<std::size_t> entries(x.numel());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (options.max_entries_per_input > 0 && entries.size() > options.max_entries_per_input) {
            for (std::size_t i = 0; i < options.max_entries_per_input; ++i) {
                std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
            }
            entries.resize(options.max_entries_per_input);
            std::sort(entries.begin(), entries.end());
        }
        auto data = x.mutable_data();
        for (std::size_t idx : entries) {
            const double a = analytic[k][idx];
            const double saved = data[idx];
            double h = options.step;
            double abs_err = 0.0, rel = 0.0;
            for (std::size_t attempt = 0; attempt <= options.refinements; ++attempt, h /= 10.0) {
                data[idx] = saved + h;
                const double up = f().item();
                data[idx] = saved - h;
                const double down = f().item();
                data[idx] = saved;
                const double numeric = (up - down) / (2.0 * h);
                abs_err = std::abs(a - numeric);
                rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
                if (rel < options.tolerance) break;
                if (attempt == 0) ++report.refined_entries;
            }
            ++report.entries_checked;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel > report.max_rel_error || std::isnan(rel)) {
                report.max_rel_error = std::isnan(rel) ? INFINITY : rel;
                report.worst_entry = inputs[k].name + "[" + std::to_string(idx) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x,
                           double step, double tolerance) {
    Tensor64 input = x.clone();
    input.set_requires_grad(true);
    GradCheckOptions options;
    options.step = step;
    options.tolerance = tolerance;
    return grad_check([&]() { return f(input); }, {{"x", input}}, options);
}

} // namespace lvpm3::ad
