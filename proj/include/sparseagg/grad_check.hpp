#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparseagg/tape.hpp"

namespace sparseagg {

// Scalar-valued function of a list of tensors, evaluated on the given tape.
template <typename S>
using ScalarFn = std::function<Tensor<S>(Tape<S>&, const std::vector<Tensor<S>>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;  // |a - n| / max(1e-12, |a| + |n|), all coordinates
    int worst_input = -1;
    std::int64_t worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    // Split view for chains with near-zero derivatives, where the relative
    // formula amplifies the finite-difference noise floor: relative error over
    // coordinates with |a| + |n| >= 1e-5 and absolute error over the rest.
    double rel_err_significant = 0.0;
    double abs_err_tiny = 0.0;
};

// Compares the tape gradient of `fn` against central finite differences.
// Relative error per coordinate: |a - n| / max(1e-12, |a| + |n|).
template <typename S>
GradCheckReport grad_check(const ScalarFn<S>& fn, const std::vector<Tensor<S>>& inputs,
                           double step) {
    if (step <= 0) throw ContractError("grad_check: step must be positive");

    const auto eval = [&fn](const std::vector<Tensor<S>>& args, int input, std::int64_t coord) {
        Tape<S> tape;
        const Tensor<S> out = fn(tape, args);
        if (!out.is_scalar()) {
            throw ContractError("grad_check: function output must be scalar, got shape " +
                                shape_str(out.shape));
        }
        const double y = static_cast<double>(out.scalar_value());
        if (!std::isfinite(y)) {
            throw NumericError("grad_check: non-finite output while perturbing input " +
                               std::to_string(input) + " coordinate " + std::to_string(coord));
        }
        return y;
    };

    // Analytic pass.
    Tape<S> tape;
    std::vector<Tensor<S>> lifted;
    lifted.reserve(inputs.size());
    for (const auto& t : inputs) lifted.push_back(tape.input(t.detached()));
    const Tensor<S> out = fn(tape, lifted);
    if (!out.is_scalar()) {
        throw ContractError("grad_check: function output must be scalar, got shape " +
                            shape_str(out.shape));
    }
    if (!std::isfinite(static_cast<double>(out.scalar_value()))) {
        throw NumericError("grad_check: non-finite output at the base point");
    }
    tape.backward(out);
    std::vector<Tensor<S>> analytic;
    analytic.reserve(lifted.size());
    for (const auto& t : lifted) analytic.push_back(tape.gradient(t));

    GradCheckReport report;
    std::vector<Tensor<S>> args;
    for (const auto& t : inputs) args.push_back(t.detached());
    for (std::size_t i = 0; i < args.size(); ++i) {
        for (std::int64_t j = 0; j < args[i].numel(); ++j) {
            const S saved = args[i][j];
            args[i][j] = saved + static_cast<S>(step);
            const double fp = eval(args, static_cast<int>(i), j);
            args[i][j] = saved - static_cast<S>(step);
            const double fm = eval(args, static_cast<int>(i), j);
            args[i][j] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = static_cast<double>(analytic[i][j]);
            const double denom = std::abs(a) + std::abs(numeric);
            const double rel = std::abs(a - numeric) / std::max(1e-12, denom);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = static_cast<int>(i);
                report.worst_coord = j;
                report.analytic = a;
                report.numeric = numeric;
            }
            if (denom >= 1e-5) {
                report.rel_err_significant = std::max(report.rel_err_significant, rel);
            } else {
                report.abs_err_tiny = std::max(report.abs_err_tiny, std::abs(a - numeric));
            }
        }
    }
    return report;
}

}  // namespace sparseagg
